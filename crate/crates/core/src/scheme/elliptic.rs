//! Conjugate gradients for the shifted Neumann Laplacian `(c - Δ)u = f`.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::grid::{laplacian_into, ScalarField};
use crate::scalar::{compensated_sum, Real};

/// Converged solve together with its residual history.
#[derive(Debug, Clone)]
pub struct EllipticSolution<T> {
    pub solution: ScalarField<T>,
    /// `‖f - (c - Δ)u‖ / ‖f‖` after every iteration.
    pub residuals: Vec<f64>,
    /// Residual recomputed from scratch at exit.
    pub true_residual: T,
}

fn dot<T: Real>(a: &Array2<T>, b: &Array2<T>) -> T {
    compensated_sum(a.iter().zip(b.iter()).map(|(&x, &y)| x * y))
}

fn apply<T: Real>(field: &ScalarField<T>, shift: T, v: &Array2<T>, out: &mut Array2<T>) {
    laplacian_into(field.grid(), v, out);
    Zip::from(out).and(v).for_each(|o, &x| *o = shift * x - *o);
}

/// Solves `(shift - Δ)u = rhs` to relative residual `tol`, starting from `guess`.
///
/// `shift` must be positive so the operator is definite despite the
/// Neumann closure.
pub fn helmholtz_solve<T: Real>(
    shift: T,
    rhs: &ScalarField<T>,
    guess: Option<&ScalarField<T>>,
    tol: T,
) -> Result<EllipticSolution<T>> {
    if !(shift > T::zero()) || !shift.is_finite() {
        return Err(Error::invalid(format!("Helmholtz shift must be positive, got {shift}")));
    }
    if let Some(g) = guess {
        rhs.grid().check_same(g.grid())?;
    }
    let grid = *rhs.grid();
    let b = rhs.values();
    let b_norm = dot(b, b).sqrt();
    let mut x = guess.map_or_else(|| Array2::zeros(b.raw_dim()), |g| g.values().clone());
    let mut residuals = Vec::new();
    if b_norm == T::zero() {
        let solution = ScalarField::new(grid, Array2::zeros(b.raw_dim()))?;
        return Ok(EllipticSolution { solution, residuals, true_residual: T::zero() });
    }
    let max_iters = 20 * grid.n() + 200;
    let mut ap = Array2::zeros(b.raw_dim());
    // Restarting from the true residual guards against recurrence drift.
    for _restart in 0..4 {
        apply(rhs, shift, &x, &mut ap);
        let mut r = Zip::from(b).and(&ap).map_collect(|&bi, &ai| bi - ai);
        let mut rr = dot(&r, &r);
        if rr.sqrt() <= tol * b_norm {
            let solution = ScalarField::new(grid, x)?;
            return Ok(EllipticSolution { solution, residuals, true_residual: rr.sqrt() / b_norm });
        }
        let mut p = r.clone();
        for _ in 0..max_iters {
            apply(rhs, shift, &p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > T::zero()) || !pap.is_finite() {
                return Err(Error::Solver { residuals });
            }
            let step = rr / pap;
            Zip::from(&mut x).and(&p).for_each(|xi, &pi| *xi += step * pi);
            Zip::from(&mut r).and(&ap).for_each(|ri, &ai| *ri -= step * ai);
            let rr_new = dot(&r, &r);
            let rel = rr_new.sqrt() / b_norm;
            residuals.push(rel.as_f64());
            if !rel.is_finite() {
                return Err(Error::Solver { residuals });
            }
            if rel <= tol {
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            Zip::from(&mut p).and(&r).for_each(|pi, &ri| *pi = ri + beta * *pi);
        }
    }
    Err(Error::Solver { residuals })
}

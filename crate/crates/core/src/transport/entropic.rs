//! Log-domain Sinkhorn iterations for the entropic transport problem
//!
//! ```text
//! OT_eps(a, b) = min_{γ ∈ Π(a, b)} <C, γ> + eps Σ γ log γ
//! ```
//!
//! between cell-mass vectors `a`, `b`. Plans are kept in Gibbs form
//! `γ_ij = exp((f_i + g_j - C_ij) / eps)` and costs are reported through the
//! dual value `<f, a> + <g, b> + eps (m - Σγ)`, whose error is quadratic in
//! the marginal violation.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Real};
use crate::transport::kernel::GibbsKernel;

/// Entrywise `ln`, mapping zero mass to `-inf`.
pub(crate) fn log_masses<T: Real>(a: &Array2<T>) -> Array2<T> {
    a.mapv(|v| if v > T::zero() { v.ln() } else { T::neg_infinity() })
}

/// `<u, a>` skipping cells with zero mass (where `u` may be infinite).
pub(crate) fn pair<T: Real>(u: &Array2<T>, a: &Array2<T>) -> T {
    compensated_sum(u.iter().zip(a.iter()).filter(|(_, &m)| m > T::zero()).map(|(&p, &m)| p * m))
}

/// Row marginal of the Gibbs plan with log-potentials `f/eps` and `lse(g/eps)`.
pub(crate) fn gibbs_marginal<T: Real>(f: &Array2<T>, lse_g: &Array2<T>, eps: T) -> Array2<T> {
    let mut out = Array2::zeros(f.raw_dim());
    Zip::from(&mut out).and(f).and(lse_g).for_each(|o, &fi, &z| {
        let e = fi / eps + z;
        *o = if e.is_finite() { e.exp() } else { T::zero() };
    });
    out
}

pub(crate) fn max_abs_diff<T: Real>(a: &Array2<T>, b: &Array2<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

/// Potentials of a balanced problem between `a` and `b`.
#[derive(Debug, Clone)]
pub struct DualPair<T> {
    pub f: Array2<T>,
    pub g: Array2<T>,
    /// Dual objective; equals `OT_eps(a, b)` up to second order in `marginal_error`.
    pub value: T,
    pub marginal_error: T,
    pub iterations: usize,
}

/// Potential of the symmetric problem `OT_eps(a, a)`.
#[derive(Debug, Clone)]
pub struct SelfDual<T> {
    pub q: Array2<T>,
    pub value: T,
    pub marginal_error: T,
    pub iterations: usize,
}

/// Balanced Sinkhorn between `a` and `b` (equal total mass).
///
/// Stops when the row marginal of the plan is within `tol` of `a` in every
/// cell; the column marginal is exact after each `g` update.
pub fn sinkhorn<T: Real>(
    kernel: &GibbsKernel<T>,
    a: &Array2<T>,
    b: &Array2<T>,
    warm: Option<(&Array2<T>, &Array2<T>)>,
    tol: T,
    max_iters: usize,
) -> Result<DualPair<T>> {
    let eps = kernel.eps();
    let log_a = log_masses(a);
    let log_b = log_masses(b);
    let (mut f, mut g) = match warm {
        Some((f, g)) => (f.clone(), g.clone()),
        None => (Array2::zeros(a.raw_dim()), Array2::zeros(b.raw_dim())),
    };
    // Zero-mass cells never carry plan mass; pin their potentials to -inf.
    Zip::from(&mut f).and(&log_a).for_each(|p, &l| {
        if l == T::neg_infinity() {
            *p = T::neg_infinity();
        }
    });
    Zip::from(&mut g).and(&log_b).for_each(|p, &l| {
        if l == T::neg_infinity() {
            *p = T::neg_infinity();
        }
    });

    let mut lse_g = kernel.log_apply(&g.mapv(|v| v / eps))?;
    let mut err = T::infinity();
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        Zip::from(&mut f).and(&log_a).and(&lse_g).for_each(|p, &la, &z| *p = eps * (la - z));
        let lse_f = kernel.log_apply(&f.mapv(|v| v / eps))?;
        Zip::from(&mut g).and(&log_b).and(&lse_f).for_each(|p, &lb, &z| *p = eps * (lb - z));
        lse_g = kernel.log_apply(&g.mapv(|v| v / eps))?;
        err = max_abs_diff(&gibbs_marginal(&f, &lse_g, eps), a);
        if !err.is_finite() {
            break;
        }
        if err <= tol {
            let value = dual_value(&f, &g, a, b, &lse_g, eps);
            return Ok(DualPair { f, g, value, marginal_error: err, iterations });
        }
    }
    Err(Error::Diverged { iterations, marginal_error: err.as_f64() })
}

fn dual_value<T: Real>(
    f: &Array2<T>,
    g: &Array2<T>,
    a: &Array2<T>,
    b: &Array2<T>,
    lse_g: &Array2<T>,
    eps: T,
) -> T {
    let plan_mass = compensated_sum(gibbs_marginal(f, lse_g, eps).iter().copied());
    let mass = compensated_sum(a.iter().copied());
    pair(f, a) + pair(g, b) + eps * (mass - plan_mass)
}

/// Symmetric Sinkhorn for `OT_eps(a, a)` using the averaged fixed-point update
/// `q <- (q + eps (log a - lse(q / eps))) / 2`.
pub fn self_sinkhorn<T: Real>(
    kernel: &GibbsKernel<T>,
    a: &Array2<T>,
    warm: Option<&Array2<T>>,
    tol: T,
    max_iters: usize,
) -> Result<SelfDual<T>> {
    let eps = kernel.eps();
    let log_a = log_masses(a);
    let mut q = match warm {
        Some(q) => q.clone(),
        None => Array2::zeros(a.raw_dim()),
    };
    Zip::from(&mut q).and(&log_a).for_each(|p, &l| {
        if l == T::neg_infinity() {
            *p = T::neg_infinity();
        }
    });
    let mut iterations = 0;
    let mut lse_q = kernel.log_apply(&q.mapv(|v| v / eps))?;
    loop {
        let mut err = max_abs_diff(&gibbs_marginal(&q, &lse_q, eps), a);
        if iterations == 0 && !err.is_finite() && warm.is_some() {
            // A warm start far from the symmetric solution can overflow; restart cold.
            Zip::from(&mut q).and(&log_a).for_each(|p, &l| *p = if l.is_finite() { T::zero() } else { l });
            lse_q = kernel.log_apply(&q.mapv(|v| v / eps))?;
            err = max_abs_diff(&gibbs_marginal(&q, &lse_q, eps), a);
        }
        if err <= tol {
            let value = self_value(&q, a, &lse_q, eps);
            return Ok(SelfDual { q, value, marginal_error: err, iterations });
        }
        if iterations >= max_iters || !err.is_finite() {
            return Err(Error::Diverged { iterations, marginal_error: err.as_f64() });
        }
        iterations += 1;
        symmetric_update(&mut q, &log_a, &lse_q, eps);
        lse_q = kernel.log_apply(&q.mapv(|v| v / eps))?;
    }
}

pub(crate) fn symmetric_update<T: Real>(q: &mut Array2<T>, log_a: &Array2<T>, lse_q: &Array2<T>, eps: T) {
    let half = T::lit(0.5);
    Zip::from(q).and(log_a).and(lse_q).for_each(|p, &la, &z| {
        *p = if la.is_finite() { half * (*p + eps * (la - z)) } else { T::neg_infinity() };
    });
}

pub(crate) fn self_value<T: Real>(q: &Array2<T>, a: &Array2<T>, lse_q: &Array2<T>, eps: T) -> T {
    let plan_mass = compensated_sum(gibbs_marginal(q, lse_q, eps).iter().copied());
    let mass = compensated_sum(a.iter().copied());
    T::lit(2.0) * pair(q, a) + eps * (mass - plan_mass)
}

/// Debiased divergence `OT(a,b) - OT(a,a)/2 - OT(b,b)/2` with its parts.
#[derive(Debug, Clone)]
pub struct Divergence<T> {
    pub value: T,
    pub cross: DualPair<T>,
    pub self_a: SelfDual<T>,
    pub self_b: SelfDual<T>,
}

impl<T: Real> Divergence<T> {
    pub fn marginal_error(&self) -> T {
        self.cross.marginal_error.max(self.self_a.marginal_error).max(self.self_b.marginal_error)
    }
}

pub fn divergence<T: Real>(
    kernel: &GibbsKernel<T>,
    a: &Array2<T>,
    b: &Array2<T>,
    tol: T,
    max_iters: usize,
) -> Result<Divergence<T>> {
    let cross = sinkhorn(kernel, a, b, None, tol, max_iters)?;
    let self_a = self_sinkhorn(kernel, a, Some(&cross.f), tol, max_iters)?;
    let self_b = self_sinkhorn(kernel, b, Some(&cross.g), tol, max_iters)?;
    let half = T::lit(0.5);
    let value = cross.value - half * (self_a.value + self_b.value);
    Ok(Divergence { value, cross, self_a, self_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Grid2D};
    use crate::transport::SinkhornMode;

    fn gaussian_masses(g: &Grid2D<f64>, mx: f64, my: f64, s: f64) -> Array2<f64> {
        let xs = g.centers();
        let n = g.n();
        let mut a = Array2::from_shape_fn((n, n), |(i, j)| {
            (-((xs[i] - mx).powi(2) + (xs[j] - my).powi(2)) / (2.0 * s * s)).exp()
        });
        let t = a.sum();
        a /= t;
        a
    }

    #[test]
    fn self_divergence_vanishes() {
        let g = make_grid(3.0, 24).unwrap();
        let k = GibbsKernel::new(g, 0.1, SinkhornMode::LogDomain).unwrap();
        let a = gaussian_masses(&g, 0.3, -0.2, 0.8);
        let d = divergence(&k, &a, &a, 1e-12, 10_000).unwrap();
        assert!(d.value.abs() < 1e-10, "{}", d.value);
    }

    #[test]
    fn translation_cost_is_recovered() {
        let g = make_grid(4.0, 32).unwrap();
        let k = GibbsKernel::new(g, 0.0625, SinkhornMode::LogDomain).unwrap();
        let a = gaussian_masses(&g, -0.5, 0.0, 0.7);
        let b = gaussian_masses(&g, 0.5, 0.0, 0.7);
        let d = divergence(&k, &a, &b, 1e-11, 20_000).unwrap();
        assert!((d.value - 1.0).abs() < 0.01, "{}", d.value);
    }

    #[test]
    fn dual_value_matches_plan_primal() {
        let g = make_grid(2.0, 8).unwrap();
        let eps = 0.5;
        let k = GibbsKernel::new(g, eps, SinkhornMode::Scaling).unwrap();
        let a = gaussian_masses(&g, -0.4, 0.1, 0.6);
        let b = gaussian_masses(&g, 0.6, 0.3, 0.9);
        let r = sinkhorn(&k, &a, &b, None, 1e-14, 10_000).unwrap();
        let xs = g.centers();
        let n = g.n();
        let mut primal = 0.0;
        let mut rows = Array2::<f64>::zeros((n, n));
        for ((i, j), &fi) in r.f.indexed_iter() {
            for ((k2, l), &gj) in r.g.indexed_iter() {
                let c = (xs[i] - xs[k2]).powi(2) + (xs[j] - xs[l]).powi(2);
                let p = ((fi + gj - c) / eps).exp();
                primal += c * p + eps * p * p.ln();
                rows[[i, j]] += p;
            }
        }
        assert!(max_abs_diff(&rows, &a) < 1e-13);
        assert!((primal - r.value).abs() < 1e-12, "{primal} vs {}", r.value);
    }

    #[test]
    fn zero_mass_cells_are_supported() {
        let g = make_grid(1.0, 6).unwrap();
        let k = GibbsKernel::new(g, 0.2, SinkhornMode::LogDomain).unwrap();
        let mut a = Array2::zeros((6, 6));
        a[[1, 1]] = 0.5;
        a[[2, 4]] = 0.5;
        let mut b = Array2::zeros((6, 6));
        b[[4, 4]] = 1.0;
        let r = sinkhorn(&k, &a, &b, None, 1e-13, 1000).unwrap();
        assert!(r.f[[0, 0]] == f64::NEG_INFINITY);
        let d = divergence(&k, &a, &b, 1e-13, 1000).unwrap();
        assert!(d.value.is_finite() && d.value > 0.0);
    }

    #[test]
    fn iteration_cap_reports_divergence() {
        let g = make_grid(2.0, 8).unwrap();
        let k = GibbsKernel::new(g, 0.01, SinkhornMode::LogDomain).unwrap();
        let a = gaussian_masses(&g, -1.0, 0.0, 0.3);
        let b = gaussian_masses(&g, 1.0, 0.0, 0.5);
        match sinkhorn(&k, &a, &b, None, 1e-14, 2) {
            Err(Error::Diverged { iterations, marginal_error }) => {
                assert_eq!(iterations, 2);
                assert!(marginal_error > 1e-14);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}

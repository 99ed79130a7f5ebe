//! Separable Gibbs kernel `exp(-|x - y|^2 / eps)` on a uniform grid.
//!
//! The squared Euclidean cost splits into x and y parts, so applying the
//! `n^2 x n^2` kernel reduces to two `n x n` matrix products. All Sinkhorn
//! variants in this crate are written against [`GibbsKernel::log_apply`],
//! which returns `log(K exp(w))` for a log-domain input `w`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkhornMode {
    /// Log-domain below `1e-2 * (2L)^2`, plain scalings above.
    #[default]
    Auto,
    Scaling,
    LogDomain,
}

impl SinkhornMode {
    pub fn uses_log_domain<T: Real>(self, grid: &Grid2D<T>, eps: T) -> bool {
        match self {
            SinkhornMode::Auto => eps < T::lit(1e-2) * grid.box_area(),
            SinkhornMode::Scaling => false,
            SinkhornMode::LogDomain => true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GibbsKernel<T> {
    grid: Grid2D<T>,
    eps: T,
    log_domain: bool,
    /// 1D factor `exp(-(x_i - x_k)^2 / eps)`; symmetric.
    k1: Array2<T>,
    /// 1D scaled cost `(x_i - x_k)^2 / eps`, used by the exact fallback.
    c1: Array2<T>,
}

impl<T: Real> GibbsKernel<T> {
    pub fn new(grid: Grid2D<T>, eps: T, mode: SinkhornMode) -> Result<Self> {
        if !(eps > T::zero()) || !eps.is_finite() {
            return Err(Error::invalid(format!("entropic eps must be positive, got {eps}")));
        }
        let xs = grid.centers();
        let n = grid.n();
        let c1 = Array2::from_shape_fn((n, n), |(i, k)| {
            let d = xs[i] - xs[k];
            d * d / eps
        });
        let k1 = c1.mapv(|c| (-c).exp());
        Ok(Self { grid, eps, log_domain: mode.uses_log_domain(&grid, eps), k1, c1 })
    }

    pub fn grid(&self) -> &Grid2D<T> {
        &self.grid
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    pub fn is_log_domain(&self) -> bool {
        self.log_domain
    }

    /// `out[i,j] = log sum_{k,l} exp(-(C1[i,k] + C1[j,l])) exp(w[k,l])`.
    pub fn log_apply(&self, w: &Array2<T>) -> Result<Array2<T>> {
        if self.log_domain {
            Ok(self.log_apply_shifted(w))
        } else {
            self.log_apply_scaling(w)
        }
    }

    fn log_apply_scaling(&self, w: &Array2<T>) -> Result<Array2<T>> {
        let n = self.grid.n();
        let e = w.mapv(|v| v.exp());
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::Underflow { eps: self.eps.as_f64() });
        }
        let mut tmp = Array2::zeros((n, n));
        general_mat_mul(T::one(), &e, &self.k1, T::zero(), &mut tmp);
        let mut out = Array2::zeros((n, n));
        general_mat_mul(T::one(), &self.k1, &tmp, T::zero(), &mut out);
        let has_mass = w.iter().any(|v| v.is_finite());
        let mut bad = false;
        out.mapv_inplace(|v| {
            if has_mass && !(v > T::zero()) {
                bad = true;
            }
            v.ln()
        });
        if bad {
            return Err(Error::Underflow { eps: self.eps.as_f64() });
        }
        Ok(out)
    }

    fn log_apply_shifted(&self, w: &Array2<T>) -> Array2<T> {
        // Stage A contracts the y index of `w`, stage B the x index of the result.
        let partial = self.contract_rows(w);
        let out = self.contract_rows(&partial.t().to_owned());
        out.reversed_axes()
    }

    /// `out[i, l] = log Σ_j exp(w[i, j] - C1[j, l])`.
    ///
    /// Each row is shifted by its max before one matrix product. A sum below
    /// `1e-200` may have lost its dominant term to underflow, so those entries
    /// are recomputed with an exact one-dimensional log-sum-exp.
    fn contract_rows(&self, w: &Array2<T>) -> Array2<T> {
        let n = self.grid.n();
        let tiny = T::lit(1e-200);
        let mut e = Array2::zeros((n, n));
        let mut shift = vec![T::neg_infinity(); n];
        for (i, row) in w.outer_iter().enumerate() {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            shift[i] = m;
            if m.is_finite() {
                Zip::from(e.row_mut(i)).and(&row).for_each(|o, &v| *o = (v - m).exp());
            }
        }
        let mut out = Array2::zeros((n, n));
        general_mat_mul(T::one(), &e, &self.k1, T::zero(), &mut out);
        for (i, mut row) in out.outer_iter_mut().enumerate() {
            let m = shift[i];
            if !m.is_finite() {
                row.fill(T::neg_infinity());
                continue;
            }
            for (l, o) in row.iter_mut().enumerate() {
                *o = if *o > tiny { m + o.ln() } else { self.row_lse(w, i, l) };
            }
        }
        out
    }

    fn row_lse(&self, w: &Array2<T>, i: usize, l: usize) -> T {
        let row = w.row(i);
        let c = self.c1.column(l);
        let m = row.iter().zip(c.iter()).fold(T::neg_infinity(), |a, (&v, &ci)| a.max(v - ci));
        if !m.is_finite() {
            return m;
        }
        let s: T = row.iter().zip(c.iter()).map(|(&v, &ci)| (v - ci - m).exp()).sum();
        m + s.ln()
    }
}

//! Functional inequalities behind the energy lower bound, as checkable predicates.

use serde::Serialize;

use crate::energy::{entropy, entropy_abs, Density};
use crate::error::{Error, Result};
use crate::grid::{dirichlet_energy, gradient, inner, integrate, Grid2D, ScalarField};
use crate::scalar::{compensated_sum, Real};

/// Number of outer cell layers treated as the boundary frame.
const FRAME_WIDTH: usize = 2;

/// Cached Cauchy weight `H(x) = 1 / (π (1 + |x|²)²)` on a grid.
#[derive(Debug, Clone)]
pub struct AnalysisContext<T> {
    weight: ScalarField<T>,
    log_weight: ScalarField<T>,
    deficit: T,
}

impl<T: Real> AnalysisContext<T> {
    pub fn new(grid: Grid2D<T>) -> Self {
        let pi = T::PI();
        let log_weight = ScalarField::from_fn(grid, |x, y| {
            let r2 = x * x + y * y;
            -pi.ln() - T::lit(2.0) * (T::one() + r2).ln()
        });
        let weight = log_weight.map(|l| l.exp());
        let deficit = T::one() - integrate(&weight);
        Self { weight, log_weight, deficit }
    }

    pub fn grid(&self) -> &Grid2D<T> {
        self.weight.grid()
    }

    pub fn onofri_weight(&self) -> &ScalarField<T> {
        &self.weight
    }

    pub fn log_weight(&self) -> &ScalarField<T> {
        &self.log_weight
    }

    /// `1 - ∫_box H`: the weight lost to truncating the plane.
    pub fn deficit(&self) -> T {
        self.deficit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityCheck<T> {
    pub lhs: T,
    pub rhs: T,
    pub holds: bool,
}

/// Onofri: `∫ e^ψ H ≤ exp(∫ψH + (1/16π)∫|∇ψ|²)`.
///
/// The weight outside the box is accounted for by extending ψ with its mean
/// over the boundary frame; `holds` allows a relative slack of `1e-6` plus
/// the truncation deficit.
pub fn onofri_check<T: Real>(psi: &ScalarField<T>, ctx: &AnalysisContext<T>) -> Result<InequalityCheck<T>> {
    ctx.grid().check_same(psi.grid())?;
    let max = psi.max_value();
    if max > T::lit(700.0) {
        return Err(Error::Overflow { max_value: max.as_f64() });
    }
    let delta = ctx.deficit();
    let tail = frame_mean(psi);
    let lhs = inner(&psi.map(|v| v.exp()), ctx.onofri_weight()) + tail.exp() * delta;
    let exponent = inner(psi, ctx.onofri_weight())
        + tail * delta
        + dirichlet_energy(psi) / (T::lit(16.0) * T::PI());
    let rhs = exponent.exp();
    let slack = T::lit(1e-6) + delta.abs();
    Ok(InequalityCheck { lhs, rhs, holds: lhs <= rhs * (T::one() + slack) })
}

/// Carleman: `∫ρ|log ρ| ≤ ∫ρ log ρ + 2/e - 2∫ρ log H`.
pub fn carleman_bound<T: Real>(rho: &Density<T>, ctx: &AnalysisContext<T>) -> Result<InequalityCheck<T>> {
    ctx.grid().check_same(rho.grid())?;
    let lhs = entropy_abs(rho);
    let rhs = entropy(rho) + T::lit(2.0) / T::E() - T::lit(2.0) * inner(rho.field(), ctx.log_weight());
    let slack = T::lit(1e-6) * (T::one() + rhs.abs()) + ctx.deficit().abs();
    Ok(InequalityCheck { lhs, rhs, holds: lhs <= rhs + slack })
}

/// Calibrated constant `L_ε = C N²` with `C = 2` and `N = exp(C/ε)`.
pub fn bhn_constant<T: Real>(eps: T) -> T {
    let c = T::lit(2.0);
    let n = (c / eps).exp();
    c * n * n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BhnReport<T> {
    pub lhs: T,
    pub rhs: T,
    pub l_eps: T,
    pub eps: T,
    pub holds: bool,
}

/// `‖ρ‖₂² ≤ ε ‖∇ρ/ρ‖²_{L²(ρ)} ‖ρ log ρ‖₁ + L_ε ‖ρ‖₁` with [`bhn_constant`].
pub fn bhn_check<T: Real>(rho: &Density<T>, eps: T) -> Result<BhnReport<T>> {
    if !(eps > T::zero()) || !eps.is_finite() {
        return Err(Error::invalid(format!("BHN parameter must be positive, got {eps}")));
    }
    let f = rho.field();
    let lhs = inner(f, f);
    let l_eps = bhn_constant(eps);
    let rhs = eps * fisher_information(rho) * entropy_abs(rho) + l_eps * integrate(f);
    Ok(BhnReport { lhs, rhs, l_eps, eps, holds: lhs <= rhs * (T::one() + T::lit(1e-12)) })
}

/// `∫|∇ρ|²/ρ`, counting only cells above `1e-14 · max ρ`.
pub fn fisher_information<T: Real>(rho: &Density<T>) -> T {
    let f = rho.field();
    let floor = T::lit(1e-14) * f.max_value();
    let grad = gradient(f);
    let terms = f.values().iter().zip(grad.x_values.iter().zip(grad.y_values.iter())).map(|(&r, (&gx, &gy))| {
        if r > floor {
            (gx * gx + gy * gy) / r
        } else {
            T::zero()
        }
    });
    f.grid().cell_area() * compensated_sum(terms)
}

/// Plain average of the values in the boundary frame.
pub(crate) fn frame_mean<T: Real>(f: &ScalarField<T>) -> T {
    let n = f.grid().n();
    let w = FRAME_WIDTH.min(n / 2);
    let mut count = 0usize;
    let sum = compensated_sum(f.values().indexed_iter().filter_map(|((i, j), &v)| {
        let edge = i < w || j < w || i >= n - w || j >= n - w;
        if edge {
            count += 1;
        }
        edge.then_some(v)
    }));
    sum / T::from_usize_lossy(count.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use std::f64::consts::PI;

    #[test]
    fn weight_integrates_below_one() {
        let ctx = AnalysisContext::new(make_grid(16.0f64, 256).unwrap());
        // Tail of H outside the disc of radius R is 1/(1+R²).
        assert!(ctx.deficit() > 0.0 && ctx.deficit() < 1.0 / (1.0 + 256.0));
    }

    #[test]
    fn onofri_constants_are_tight_with_tail_closure() {
        let g = make_grid(16.0f64, 256).unwrap();
        let ctx = AnalysisContext::new(g);
        for c in [-2.0, 0.0, 1.5, 3.0] {
            let r = onofri_check(&ScalarField::constant(g, c), &ctx).unwrap();
            assert!(r.holds);
            assert!((r.lhs - r.rhs).abs() < 1e-12 * r.rhs, "{c}: {r:?}");
        }
    }

    #[test]
    fn onofri_zero_and_overflow() {
        let g = make_grid(8.0f64, 64).unwrap();
        let ctx = AnalysisContext::new(g);
        let r = onofri_check(&ScalarField::zeros(g), &ctx).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-12 && (r.rhs - 1.0).abs() < 1e-12);
        let mut hot = ScalarField::zeros(g);
        hot.values_mut()[[3, 3]] = 800.0;
        assert!(matches!(onofri_check(&hot, &ctx), Err(Error::Overflow { max_value }) if max_value == 800.0));
    }

    #[test]
    fn carleman_uniform_disk() {
        let g = make_grid(4.0f64, 256).unwrap();
        let ctx = AnalysisContext::new(g);
        let disk = ScalarField::from_fn(g, |x, y| if x * x + y * y <= 1.0 { 1.0 } else { 0.0 });
        let support = g.cell_area() * disk.values().sum();
        assert!((support - PI).abs() < 0.02);
        let rho = Density::normalized(disk).unwrap();
        let r = carleman_bound(&rho, &ctx).unwrap();
        // ρ = 1/|support| there, so ∫ρ|log ρ| = log |support|.
        assert!((r.lhs - support.ln()).abs() < 1e-12, "{}", r.lhs);
        assert!(r.holds);
    }

    #[test]
    fn carleman_dense_support_reduces_to_sign() {
        let g = make_grid(2.0f64, 64).unwrap();
        let ctx = AnalysisContext::new(g);
        let blob = ScalarField::from_fn(g, |x, y| if x.abs() < 0.25 && y.abs() < 0.25 { 1.0 } else { 0.0 });
        let rho = Density::normalized(blob).unwrap();
        let r = carleman_bound(&rho, &ctx).unwrap();
        assert!((r.lhs - entropy(&rho)).abs() < 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn bhn_gaussian_and_uniform() {
        let g = make_grid(8.0f64, 256).unwrap();
        let rho = Density::normalized(ScalarField::from_fn(g, |x, y| (-(x * x + y * y) / 2.0).exp())).unwrap();
        assert!((fisher_information(&rho) - 2.0).abs() < 0.01);
        let r = bhn_check(&rho, 1.0).unwrap();
        assert!(r.holds && r.lhs.is_finite() && r.rhs.is_finite());
        assert!((r.lhs - 1.0 / (4.0 * PI)).abs() < 1e-4);
        assert!((r.l_eps - 2.0 * 4.0f64.exp()).abs() < 1e-12 * r.l_eps);

        let u = Density::uniform(make_grid(1.0f64, 16).unwrap());
        assert_eq!(fisher_information(&u), 0.0);
        let r = bhn_check(&u, 0.5).unwrap();
        assert!(r.holds);
        assert!((r.rhs - r.l_eps).abs() < 1e-9 * r.l_eps);
        assert!(bhn_check(&u, 0.0).is_err());
    }
}

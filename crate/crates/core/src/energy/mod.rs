//! Free energy of the coupled density/potential system, its proximal
//! companion functional, and the functional inequalities that bound it below.

mod inequalities;
mod params;
pub mod random;

use serde::Serialize;

pub use inequalities::{
    bhn_check, bhn_constant, carleman_bound, fisher_information, onofri_check, AnalysisContext, BhnReport,
    InequalityCheck,
};
pub use params::{default_entropic_eps, Density, FlowMode, Potential, SchemeParams};

use crate::error::Result;
use crate::grid::{dirichlet_energy, inner, ScalarField};
use crate::scalar::{compensated_sum, Real};

/// The four terms of `E[ρ, φ] = (1/χ)∫ρ log ρ - ∫ρφ + ½∫|∇φ|² + (α/2)∫φ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown<T> {
    pub entropy_term: T,
    pub interaction_term: T,
    pub dirichlet_term: T,
    pub mass_term: T,
    pub total: T,
}

impl<T: Real> EnergyBreakdown<T> {
    fn assemble(entropy_term: T, interaction_term: T, dirichlet_term: T, mass_term: T) -> Self {
        let total = compensated_sum([entropy_term, interaction_term, dirichlet_term, mass_term]);
        Self { entropy_term, interaction_term, dirichlet_term, mass_term, total }
    }
}

/// `∫ρ log ρ` with `0 log 0 = 0`.
pub fn entropy<T: Real>(rho: &Density<T>) -> T {
    let field = rho.field();
    field.grid().cell_area() * compensated_sum(field.values().iter().map(|&v| v.xlogx()))
}

/// `∫ρ |log ρ|`.
pub fn entropy_abs<T: Real>(rho: &Density<T>) -> T {
    let field = rho.field();
    field.grid().cell_area() * compensated_sum(field.values().iter().map(|&v| v.xlogx().abs()))
}

/// Evaluates the free energy. In diffusion-only mode the interaction term is zero.
pub fn free_energy<T: Real>(rho: &Density<T>, phi: &Potential<T>, params: &SchemeParams<T>) -> Result<EnergyBreakdown<T>> {
    rho.grid().check_same(phi.grid())?;
    let half = T::lit(0.5);
    let entropy_term = entropy(rho) / params.chi;
    let interaction_term = if params.coupled() { -inner(rho.field(), phi.field()) } else { T::zero() };
    let dirichlet_term = half * dirichlet_energy(phi.field());
    let mass_term = half * params.alpha * inner(phi.field(), phi.field());
    Ok(EnergyBreakdown::assemble(entropy_term, interaction_term, dirichlet_term, mass_term))
}

/// `(1/χ)∫ρ log ρ + (τ/2)∫(|∇φ|² + αφ²)`.
pub fn auxiliary_functional<T: Real>(rho: &Density<T>, phi: &Potential<T>, params: &SchemeParams<T>) -> Result<T> {
    rho.grid().check_same(phi.grid())?;
    let p = phi.field();
    let h1 = dirichlet_energy(p) + params.alpha * inner(p, p);
    Ok(entropy(rho) / params.chi + T::lit(0.5) * params.tau * h1)
}

/// Both sides of the subcritical lower bound
///
/// ```text
/// E ≥ (8π-χ)/(16πχ) ∫ρ|log ρ| + ν(‖∇φ‖² + α‖φ‖²) + 3/(2χ) ∫ρ log H - C₁.
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBoundReport<T> {
    pub nu: T,
    pub c1: T,
    pub lhs: T,
    pub rhs: T,
    pub holds: bool,
}

/// `ν = (8π - χ) / (16π + 2χ)`.
pub fn lower_bound_nu<T: Real>(chi: T) -> T {
    let pi = T::PI();
    (T::lit(8.0) * pi - chi) / (T::lit(16.0) * pi + T::lit(2.0) * chi)
}

/// `C₁ = (8π-χ)/(8πeχ) + (8π+χ)/(4αχ) ‖H‖₂²` with `‖H‖₂² = 1/(3π)` on the plane.
pub fn lower_bound_c1<T: Real>(chi: T, alpha: T) -> T {
    let pi = T::PI();
    let e = T::E();
    let eight_pi = T::lit(8.0) * pi;
    let h_sq = T::one() / (T::lit(3.0) * pi);
    (eight_pi - chi) / (eight_pi * e * chi) + (eight_pi + chi) / (T::lit(4.0) * alpha * chi) * h_sq
}

/// Evaluates the lower bound for the full coupled energy; `None` when `χ ≥ 8π`.
pub fn energy_lower_bound<T: Real>(
    rho: &Density<T>,
    phi: &Potential<T>,
    params: &SchemeParams<T>,
    ctx: &AnalysisContext<T>,
) -> Result<Option<LowerBoundReport<T>>> {
    if !params.subcritical() {
        return Ok(None);
    }
    rho.grid().check_same(phi.grid())?;
    ctx.grid().check_same(rho.grid())?;
    let chi = params.chi;
    let pi = T::PI();
    let full = SchemeParams { mode: FlowMode::Full, ..*params };
    let lhs = free_energy(rho, phi, &full)?.total;
    let nu = lower_bound_nu(chi);
    let c1 = lower_bound_c1(chi, params.alpha);
    let p = phi.field();
    let h1 = dirichlet_energy(p) + params.alpha * inner(p, p);
    let rhs = (T::lit(8.0) * pi - chi) / (T::lit(16.0) * pi * chi) * entropy_abs(rho)
        + nu * h1
        + T::lit(1.5) / chi * inner(rho.field(), ctx.log_weight())
        - c1;
    let slack = T::lit(1e-9) * (T::one() + lhs.abs());
    Ok(Some(LowerBoundReport { nu, c1, lhs, rhs, holds: lhs >= rhs - slack }))
}

/// `∫|x|² f`.
pub fn second_moment<T: Real>(f: &ScalarField<T>) -> T {
    inner(f, &ScalarField::from_fn(*f.grid(), |x, y| x * x + y * y))
}

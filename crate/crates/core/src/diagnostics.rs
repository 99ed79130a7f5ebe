//! Checkable consequences of the scheme: Euler-Lagrange identities, the
//! discrete energy inequality, the approximate weak formulation, and
//! observables watched for boundedness or concentration.

use serde::Serialize;

use crate::energy::{entropy_abs, fisher_information, second_moment, FlowMode, SchemeParams};
use crate::error::{Error, Result};
use crate::grid::{dirichlet_energy, face_pairing, gradient, inner, integrate, laplacian, Grid2D, ScalarField, VectorField};
use crate::scalar::{compensated_sum, Real};
use crate::scheme::{State, Stepper, Trajectory, BOUNDARY_LAYERS};
use crate::transport::{barycentric_map, TransportResult};

/// `∇ρ/ρ - χ∇φ`, zero where `ρ ≤ 1e-14 · max ρ`. The potential term is
/// dropped when the coupling is off.
pub fn velocity<T: Real>(state: &State<T>, params: &SchemeParams<T>) -> VectorField<T> {
    let rho = state.rho.field();
    let floor = T::lit(1e-14) * rho.max_value();
    let grad_rho = gradient(rho);
    let grad_phi = gradient(state.phi.field());
    let chi = if params.mode == FlowMode::Full { params.chi } else { T::zero() };
    let mut v = VectorField::zeros(*rho.grid());
    for (ij, &r) in rho.values().indexed_iter() {
        if r > floor {
            v.x_values[ij] = grad_rho.x_values[ij] / r - chi * grad_phi.x_values[ij];
            v.y_values[ij] = grad_rho.y_values[ij] / r - chi * grad_phi.y_values[ij];
        }
    }
    v
}

/// `Δφ - αφ + ρ`; without coupling the density source is omitted.
pub fn elliptic_defect<T: Real>(state: &State<T>, params: &SchemeParams<T>) -> ScalarField<T> {
    let phi = state.phi.field();
    let lap = laplacian(phi);
    let base = lap.zip_map(phi, |l, p| l - params.alpha * p);
    if params.mode == FlowMode::Full {
        base.zip_map(state.rho.field(), |b, r| b + r)
    } else {
        base
    }
}

/// `∫|v|² ρ` for the [`velocity`] field.
pub fn weighted_velocity_sq<T: Real>(state: &State<T>, params: &SchemeParams<T>) -> T {
    inner(&velocity(state, params).norm_sq(), state.rho.field())
}

fn ratio<T: Real>(num: T, den: T) -> T {
    if den > T::zero() {
        num / den
    } else {
        num
    }
}

/// Relative residuals of both Euler-Lagrange equations for a step of length
/// `params.step` from `prev` to `curr`, whose transport plan runs from
/// `curr.rho` back to `prev.rho`.
pub fn el_residuals<T: Real>(
    curr: &State<T>,
    prev: &State<T>,
    params: &SchemeParams<T>,
    transport: &TransportResult<T>,
) -> Result<(T, T)> {
    curr.grid().check_same(prev.grid())?;
    let map = barycentric_map(transport, &curr.rho)?;
    let h = params.step;
    let v = velocity(curr, params);
    let masses = curr.rho.masses();
    let xs = curr.grid().centers();
    let mut diff = Vec::with_capacity(masses.len());
    let mut base = Vec::with_capacity(masses.len());
    for (ij, &m) in masses.indexed_iter() {
        let mx = (map.x_values[ij] - xs[ij.0]) / h - v.x_values[ij];
        let my = (map.y_values[ij] - xs[ij.1]) / h - v.y_values[ij];
        diff.push(m * (mx * mx + my * my));
        base.push(m * (v.x_values[ij] * v.x_values[ij] + v.y_values[ij] * v.y_values[ij]));
    }
    let rho_res = ratio(compensated_sum(diff).sqrt(), compensated_sum(base).sqrt());

    let defect = elliptic_defect(curr, params);
    let rate = params.tau / h;
    let drift = curr.phi.field().zip_map(prev.phi.field(), |a, b| rate * (a - b));
    let r = defect.zip_map(&drift, |a, b| a - b);
    let phi_res = ratio(inner(&r, &r).sqrt(), inner(&drift, &drift).sqrt());
    Ok((rho_res, phi_res))
}

/// Outcome of the approximate weak formulation for one test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakResidual<T> {
    pub radius: T,
    pub lhs: T,
    pub bound: T,
    pub holds: bool,
}

/// Both sides of the step identities plus the step's observables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport<T> {
    /// `∫|∇ρ/ρ - χ∇φ|² ρ`.
    pub discrete_w2_lhs: T,
    /// `d_W²(ρⁿ, ρⁿ⁻¹) / h²`.
    pub discrete_w2_rhs: T,
    /// `‖Δφ - αφ + ρ‖²`.
    pub discrete_l2_lhs: T,
    /// `τ² ‖φⁿ - φⁿ⁻¹‖² / h²`.
    pub discrete_l2_rhs: T,
    pub weak_residuals: Vec<WeakResidual<T>>,
    /// This step's contribution `h · I(ρⁿ)` to the time-integrated Fisher information.
    pub fisher: T,
    pub moment2: T,
    pub max_density: T,
}

impl<T: Real> IdentityReport<T> {
    pub fn l2_relative_gap(&self) -> T {
        ratio((self.discrete_l2_lhs - self.discrete_l2_rhs).abs(), self.discrete_l2_rhs.abs())
    }

    pub fn w2_relative_gap(&self) -> T {
        ratio((self.discrete_w2_lhs - self.discrete_w2_rhs).abs(), self.discrete_w2_rhs.abs())
    }
}

/// Evaluates the step identities for `prev → curr`.
pub fn discrete_identities<T: Real>(
    curr: &State<T>,
    prev: &State<T>,
    params: &SchemeParams<T>,
    transport: Option<&TransportResult<T>>,
) -> Result<IdentityReport<T>> {
    let transport = transport.ok_or_else(|| Error::invalid("discrete identities need the step's transport result"))?;
    curr.grid().check_same(prev.grid())?;
    curr.grid().check_same(transport.grid())?;
    let h = params.step;
    let defect = elliptic_defect(curr, params);
    let dphi = curr.phi.field().zip_map(prev.phi.field(), |a, b| a - b);
    let weak_residuals = weak_residual_bank(curr, prev, params, transport)?;
    Ok(IdentityReport {
        discrete_w2_lhs: weighted_velocity_sq(curr, params),
        discrete_w2_rhs: transport.cost / (h * h),
        discrete_l2_lhs: inner(&defect, &defect),
        discrete_l2_rhs: params.tau * params.tau * inner(&dphi, &dphi) / (h * h),
        weak_residuals,
        fisher: h * fisher_information(&curr.rho),
        moment2: second_moment(curr.rho.field()),
        max_density: curr.rho.field().max_value(),
    })
}

/// Tensor bump `(1-(x/r)²)³₊ (1-(y/r)²)³₊`.
pub fn bump_test_function<T: Real>(grid: Grid2D<T>, radius: T) -> ScalarField<T> {
    let b = |s: T| {
        let u = T::one() - (s / radius) * (s / radius);
        if u > T::zero() {
            u * u * u
        } else {
            T::zero()
        }
    };
    ScalarField::from_fn(grid, |x, y| b(x) * b(y))
}

/// Radii of the bump bank: a quarter, a half and three quarters of the half width.
pub fn bump_radii<T: Real>(half_width: T) -> [T; 3] {
    [T::lit(0.25), T::lit(0.5), T::lit(0.75)].map(|f| f * half_width)
}

/// `max(|ξ|, |∂ξ|, |∂²ξ|)` over cells, derivatives by centered differences.
pub fn w2_inf_norm<T: Real>(xi: &ScalarField<T>) -> T {
    let v = xi.values();
    let n = xi.grid().n();
    let dx = xi.grid().spacing();
    let two = T::lit(2.0);
    let mut m = xi.max_abs();
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let c = v[[i, j]];
            let gx = (v[[i + 1, j]] - v[[i - 1, j]]) / (two * dx);
            let gy = (v[[i, j + 1]] - v[[i, j - 1]]) / (two * dx);
            let xx = (v[[i + 1, j]] - two * c + v[[i - 1, j]]) / (dx * dx);
            let yy = (v[[i, j + 1]] - two * c + v[[i, j - 1]]) / (dx * dx);
            let xy = (v[[i + 1, j + 1]] - v[[i + 1, j - 1]] - v[[i - 1, j + 1]] + v[[i - 1, j - 1]]) / (T::lit(4.0) * dx * dx);
            for d in [gx, gy, xx, yy, xy] {
                m = m.max(d.abs());
            }
        }
    }
    m
}

/// Checks `|∫ξ(ρⁿ - ρⁿ⁻¹) + h∇ξ·(∇ρⁿ - χρⁿ∇φⁿ)| ≤ ‖ξ‖_{W²'∞} d_W²/2`.
pub fn weak_residual<T: Real>(
    xi: &ScalarField<T>,
    curr: &State<T>,
    prev: &State<T>,
    params: &SchemeParams<T>,
    transport: &TransportResult<T>,
) -> Result<(T, T, bool)> {
    let grid = *curr.grid();
    grid.check_same(xi.grid())?;
    grid.check_same(prev.grid())?;
    let n = grid.n();
    let w = BOUNDARY_LAYERS.min(n / 2);
    let touches = xi
        .values()
        .indexed_iter()
        .any(|((i, j), &v)| v != T::zero() && (i < w || j < w || i >= n - w || j >= n - w));
    if touches {
        return Err(Error::invalid("test function support reaches the boundary frame"));
    }
    let h = params.step;
    let rho = curr.rho.field();
    let change = rho.zip_map(prev.rho.field(), |a, b| a - b);
    let diffusion = face_pairing(xi, rho);
    let coupling = if params.mode == FlowMode::Full {
        let gx = gradient(xi);
        let gp = gradient(curr.phi.field());
        params.chi * inner(&gx.dot(&gp), rho)
    } else {
        T::zero()
    };
    let lhs = (inner(xi, &change) + h * (diffusion - coupling)).abs();
    let bound = w2_inf_norm(xi) * transport.cost / T::lit(2.0);
    let holds = lhs <= bound * (T::one() + T::lit(1e-6)) + T::lit(1e-14);
    Ok((lhs, bound, holds))
}

fn weak_residual_bank<T: Real>(
    curr: &State<T>,
    prev: &State<T>,
    params: &SchemeParams<T>,
    transport: &TransportResult<T>,
) -> Result<Vec<WeakResidual<T>>> {
    let grid = *curr.grid();
    bump_radii(grid.half_width())
        .into_iter()
        .map(|radius| {
            let xi = bump_test_function(grid, radius);
            let (lhs, bound, holds) = weak_residual(&xi, curr, prev, params, transport)?;
            Ok(WeakResidual { radius, lhs, bound, holds })
        })
        .collect()
}

/// Scalar observables of one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observables<T> {
    pub mass: T,
    pub moment2: T,
    pub entropy_abs: T,
    pub h1_phi: T,
    pub fisher: T,
    pub max_density: T,
}

pub fn state_observables<T: Real>(s: &State<T>) -> Observables<T> {
    let phi = s.phi.field();
    let h1 = dirichlet_energy(phi) + inner(phi, phi);
    Observables {
        mass: integrate(s.rho.field()),
        moment2: second_moment(s.rho.field()),
        entropy_abs: entropy_abs(&s.rho),
        h1_phi: h1.sqrt(),
        fisher: fisher_information(&s.rho),
        max_density: s.rho.field().max_value(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerRow<T> {
    pub step: usize,
    pub energy_before: T,
    pub energy_after: T,
    /// `d_W² / (2hχ)`.
    pub wasserstein_penalty: T,
    /// `τ‖Δφ‖² / (2h)`.
    pub l2_penalty: T,
    pub cumulative_dissipation: T,
}

/// One-step energy identity along the De Giorgi interpolant at a sampled step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeGiorgiSample<T> {
    pub step: usize,
    /// `d²(ũ(h/2), uⁿ⁻¹)`.
    pub midpoint_distance_sq: T,
    /// `d²(ũ(h/2), uⁿ)`: interpolant versus the piecewise-constant state.
    pub interpolant_gap_sq: Option<T>,
    /// `E(uⁿ⁻¹) - [d²(uⁿ, uⁿ⁻¹)/(2h) + ½∫ d²(ũ(s), uⁿ⁻¹)/s² ds + E(uⁿ)]`.
    pub metric_identity_gap: T,
    /// The same balance with both dissipation terms written through the
    /// Euler-Lagrange slopes of the two interpolants.
    pub slope_identity_gap: T,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipationLedger<T> {
    pub rows: Vec<LedgerRow<T>>,
    pub telescoped_ok: bool,
    /// `E[u₀] - (cumulative dissipation + E[u_N])`.
    pub energy_inequality_gap: T,
    /// `N · accept_slack`.
    pub slack: T,
    pub de_giorgi: Vec<DeGiorgiSample<T>>,
}

/// Options for [`dissipation_ledger`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LedgerOptions {
    /// Check the De Giorgi identity every this many steps; `0` disables it.
    pub de_giorgi_stride: usize,
    /// Also measure the interpolant's distance to the piecewise-constant state.
    pub interpolant_gap: bool,
}

/// Half the squared metric slope, `½[∫|v|²ρ/χ + ‖Δφ - αφ + ρ‖²/τ]`.
pub fn half_slope_sq<T: Real>(s: &State<T>, params: &SchemeParams<T>) -> T {
    let d = elliptic_defect(s, params);
    T::lit(0.5) * (weighted_velocity_sq(s, params) / params.chi + inner(&d, &d) / params.tau)
}

fn de_giorgi_sample<T: Real>(traj: &Trajectory<T>, n: usize, options: LedgerOptions) -> Result<DeGiorgiSample<T>> {
    let params = traj.params;
    let (prev, curr) = (&traj.states[n - 1], &traj.states[n]);
    let diag = &traj.diagnostics[n - 1];
    let h = params.step;
    let half = T::lit(0.5) * h;
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let six = T::lit(6.0);
    let mid = Stepper::new(*prev.grid(), params)?.step_sized(prev, None, half)?;
    let mid_sq = mid.diagnostics.wasserstein_sq / params.chi + params.tau * mid.diagnostics.l2_sq;
    let full_sq = diag.wasserstein_sq / params.chi + params.tau * diag.l2_sq;
    // Simpson on s ∈ {0, h/2, h} for ∫ d²(ũ(s), uⁿ⁻¹)/s² ds; the integrand
    // tends to the squared slope at uⁿ⁻¹ as s → 0.
    let start = two * half_slope_sq(prev, &params);
    let integral = h / six * (start + four * mid_sq / (half * half) + full_sq / (h * h));
    let metric_identity_gap = diag.energy_before - (full_sq / (two * h) + integral / two + diag.energy_after);

    let pc = h * half_slope_sq(curr, &params);
    let dg = h / six * (half_slope_sq(prev, &params) + four * half_slope_sq(&mid.state, &params) + half_slope_sq(curr, &params));
    let slope_identity_gap = diag.energy_before - (pc + dg + diag.energy_after);

    let interpolant_gap_sq = if options.interpolant_gap {
        Some(crate::scheme::product_distance_sq(&mid.state, curr, &params)?)
    } else {
        None
    };
    Ok(DeGiorgiSample {
        step: n,
        midpoint_distance_sq: mid_sq,
        interpolant_gap_sq,
        metric_identity_gap,
        slope_identity_gap,
        error: None,
    })
}

/// Per-step dissipation bookkeeping and the telescoped energy inequality.
pub fn dissipation_ledger<T: Real>(traj: &Trajectory<T>, options: LedgerOptions) -> DissipationLedger<T> {
    let params = traj.params;
    let two_h = T::lit(2.0) * params.step;
    let mut cumulative = T::zero();
    let rows: Vec<LedgerRow<T>> = traj
        .diagnostics
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let wasserstein_penalty = d.wasserstein_sq / (params.chi * two_h);
            let l2_penalty = params.tau * d.l2_sq / two_h;
            cumulative += wasserstein_penalty + l2_penalty;
            LedgerRow {
                step: k + 1,
                energy_before: d.energy_before,
                energy_after: d.energy_after,
                wasserstein_penalty,
                l2_penalty,
                cumulative_dissipation: cumulative,
            }
        })
        .collect();
    let e0 = traj.diagnostics.first().map_or(T::zero(), |d| d.energy_before);
    let e_final = traj.diagnostics.last().map_or(e0, |d| d.energy_after);
    let energy_inequality_gap = e0 - (cumulative + e_final);
    let slack = params.accept_slack() * T::from_usize_lossy(rows.len());
    let telescoped_ok = energy_inequality_gap >= -slack;

    let mut de_giorgi = Vec::new();
    if options.de_giorgi_stride > 0 {
        for n in (options.de_giorgi_stride..=traj.steps()).step_by(options.de_giorgi_stride) {
            de_giorgi.push(de_giorgi_sample(traj, n, options).unwrap_or_else(|e| DeGiorgiSample {
                step: n,
                midpoint_distance_sq: T::nan(),
                interpolant_gap_sq: None,
                metric_identity_gap: T::nan(),
                slope_identity_gap: T::nan(),
                error: Some(e.to_string()),
            }));
        }
    }
    DissipationLedger { rows, telescoped_ok, energy_inequality_gap, slack, de_giorgi }
}

/// Observational summary of concentration along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupReport<T> {
    pub times: Vec<T>,
    pub max_density: Vec<T>,
    /// `max_t max ρ / max ρ₀`.
    pub growth_ratio: T,
    pub moment2: Vec<T>,
    /// Least-squares slope of the second moment in time.
    pub moment2_trend: T,
    /// Mass fraction in the densest 1% of cells.
    pub concentration: Vec<T>,
    /// Trips once the concentration exceeds both one half and its initial value.
    pub concentration_flag: bool,
    pub subcritical: bool,
}

impl<T: Real> BlowupReport<T> {
    /// First time the max density reaches `factor` times its initial value.
    pub fn growth_time(&self, factor: T) -> Option<T> {
        let m0 = self.max_density[0];
        self.max_density.iter().zip(&self.times).find(|(&m, _)| m >= factor * m0).map(|(_, &t)| t)
    }

    /// Whether the max density never rises by more than `rel_tol` after `t0`.
    pub fn nonincreasing_after(&self, t0: T, rel_tol: T) -> bool {
        let tail: Vec<T> = self.max_density.iter().zip(&self.times).filter(|(_, &t)| t >= t0).map(|(&m, _)| m).collect();
        tail.windows(2).all(|w| w[1] <= w[0] * (T::one() + rel_tol))
    }
}

fn top_fraction<T: Real>(field: &ScalarField<T>) -> T {
    let mut v: Vec<T> = field.values().iter().copied().collect();
    let k = (v.len() / 100).max(1);
    v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    field.grid().cell_area() * compensated_sum(v[..k].iter().copied())
}

pub fn blowup_monitor<T: Real>(traj: &Trajectory<T>, params: &SchemeParams<T>) -> BlowupReport<T> {
    let times: Vec<T> = traj.states.iter().map(|s| s.time).collect();
    let max_density: Vec<T> = traj.states.iter().map(|s| s.rho.field().max_value()).collect();
    let moment2: Vec<T> = traj.states.iter().map(|s| second_moment(s.rho.field())).collect();
    let concentration: Vec<T> = traj.states.iter().map(|s| top_fraction(s.rho.field())).collect();
    let peak = max_density.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let c0 = concentration[0];
    let limit = c0.max(T::lit(0.5));
    BlowupReport {
        growth_ratio: peak / max_density[0],
        moment2_trend: slope(&times, &moment2),
        concentration_flag: concentration.iter().any(|&c| c > limit),
        subcritical: params.subcritical(),
        times,
        max_density,
        moment2,
        concentration,
    }
}

/// Least-squares slope of `y` against `x`; zero for fewer than two points.
pub fn slope<T: Real>(x: &[T], y: &[T]) -> T {
    let n = x.len().min(y.len());
    if n < 2 {
        return T::zero();
    }
    let nf = T::from_usize_lossy(n);
    let mx = compensated_sum(x[..n].iter().copied()) / nf;
    let my = compensated_sum(y[..n].iter().copied()) / nf;
    let sxy = compensated_sum((0..n).map(|i| (x[i] - mx) * (y[i] - my)));
    let sxx = compensated_sum((0..n).map(|i| (x[i] - mx) * (x[i] - mx)));
    if sxx > T::zero() {
        sxy / sxx
    } else {
        T::zero()
    }
}

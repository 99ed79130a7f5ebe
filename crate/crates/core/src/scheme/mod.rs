//! Minimizing-movement stepper for the coupled density/potential system.
//!
//! Each step minimizes
//!
//! ```text
//! F(ρ, φ) = E[ρ, φ] + (1/2h) [ d_W²(ρ, ρⁿ)/χ + τ ‖φ - φⁿ‖² ]
//! ```
//!
//! by alternating an exact elliptic solve in φ with an entropic proximal
//! step in ρ, so `F` decreases monotonically across sweeps.

mod elliptic;

use serde::Serialize;

pub use elliptic::{helmholtz_solve, EllipticSolution};

use crate::diagnostics::el_residuals;
use crate::energy::{free_energy, Density, Potential, SchemeParams};
use crate::error::{Error, Result};
use crate::grid::{frame_integral, inner, Grid2D, ScalarField};
use crate::scalar::Real;
use crate::transport::{entropic_prox, entropic_result, GibbsKernel, ProxWarmStart, TransportResult};

/// Relative residual the φ-substep is solved to.
pub const PHI_TOL: f64 = 1e-13;
/// Cell layers whose mass is watched for boundary contact.
pub const BOUNDARY_LAYERS: usize = 2;
/// Mass in the boundary layers that aborts a run.
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-4;

/// A point `(ρ, φ)` of the product space at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct State<T> {
    pub rho: Density<T>,
    pub phi: Potential<T>,
    pub time: T,
}

impl<T: Real> State<T> {
    pub fn new(rho: Density<T>, phi: Potential<T>, time: T) -> Result<Self> {
        rho.grid().check_same(phi.grid())?;
        if !(time >= T::zero()) || !time.is_finite() {
            return Err(Error::invalid(format!("state time must be finite and nonnegative, got {time}")));
        }
        Ok(Self { rho, phi, time })
    }

    pub fn grid(&self) -> &Grid2D<T> {
        self.rho.grid()
    }
}

/// Bookkeeping for one accepted step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics<T> {
    pub wasserstein_sq: T,
    pub l2_sq: T,
    pub penalized_value: T,
    pub inner_iterations: usize,
    pub energy_before: T,
    pub energy_after: T,
    /// Relative L²(ρ) mismatch between the transport velocity and `∇ρ/ρ - χ∇φ`.
    pub el_residual_rho: T,
    /// Relative L² residual of the discrete elliptic equation.
    pub el_residual_phi: T,
    pub sinkhorn_iterations: usize,
    /// `|Σ masses - 1|` of the transport output before renormalization.
    pub mass_drift: T,
    pub boundary_mass: T,
}

impl<T: Real> StepDiagnostics<T> {
    /// `penalized_value - energy_before`; nonpositive for an exact minimizer.
    pub fn dissipation_gap(&self) -> T {
        self.penalized_value - self.energy_before
    }
}

/// Everything a step produces, including the transport plan to the anchor.
#[derive(Debug, Clone)]
pub struct StepOutcome<T> {
    pub state: State<T>,
    pub diagnostics: StepDiagnostics<T>,
    /// Plan from the new density to the anchor density.
    pub transport: TransportResult<T>,
}

/// States at `t = 0, h, 2h, …` with the diagnostics of each step.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub states: Vec<State<T>>,
    pub diagnostics: Vec<StepDiagnostics<T>>,
    pub params: SchemeParams<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn initial(&self) -> &State<T> {
        &self.states[0]
    }

    pub fn last(&self) -> &State<T> {
        self.states.last().expect("trajectory holds its initial state")
    }

    pub fn steps(&self) -> usize {
        self.diagnostics.len()
    }

    /// Piecewise-constant interpolant: the state `uⁿ` for `t ∈ ((n-1)h, nh]`.
    pub fn at(&self, t: T) -> &State<T> {
        if !(t > T::zero()) {
            return self.initial();
        }
        let n = (t / self.params.step - T::lit(1e-9)).ceil().as_f64().max(0.0) as usize;
        &self.states[n.min(self.states.len() - 1)]
    }
}

/// A run that stopped early, with everything computed before the failure.
#[derive(Debug, thiserror::Error)]
#[error("run aborted after {} steps: {source}", partial.steps())]
pub struct RunFailure<T: Real> {
    #[source]
    pub source: Error,
    pub partial: Box<Trajectory<T>>,
}

/// Carries the Gibbs kernel and warm-start potentials across steps.
#[derive(Debug, Clone)]
pub struct Stepper<T> {
    params: SchemeParams<T>,
    kernel: GibbsKernel<T>,
    warm: ProxWarmStart<T>,
}

impl<T: Real> Stepper<T> {
    pub fn new(grid: Grid2D<T>, params: SchemeParams<T>) -> Result<Self> {
        params.validate()?;
        let kernel = GibbsKernel::new(grid, params.entropic_eps, params.sinkhorn_mode)?;
        Ok(Self { params, kernel, warm: ProxWarmStart::default() })
    }

    pub fn params(&self) -> &SchemeParams<T> {
        &self.params
    }

    /// One step from `prev`, starting the sweeps at `prev` itself.
    pub fn step(&mut self, prev: &State<T>) -> Result<StepOutcome<T>> {
        self.step_sized(prev, None, self.params.step)
    }

    /// One step anchored at `prev` whose sweeps start from `guess.rho`.
    pub fn step_from(&mut self, prev: &State<T>, guess: &State<T>) -> Result<StepOutcome<T>> {
        self.step_sized(prev, Some(&guess.rho), self.params.step)
    }

    /// One step of length `step` anchored at `prev`.
    pub fn step_sized(&mut self, prev: &State<T>, guess: Option<&Density<T>>, step: T) -> Result<StepOutcome<T>> {
        let grid = *prev.grid();
        grid.check_same(self.kernel.grid())?;
        if let Some(g) = guess {
            grid.check_same(g.grid())?;
        }
        if !(step > T::zero()) || !step.is_finite() {
            return Err(Error::invalid(format!("step must be positive, got {step}")));
        }
        let params = self.params.with_step(step);
        let energy_before = free_energy(&prev.rho, &prev.phi, &params)?.total;

        let mut rho = guess.cloned().unwrap_or_else(|| prev.rho.clone());
        let mut best = energy_before;
        let mut sweeps = 0;
        let mut sinkhorn_iterations = 0;
        let mut solved = None;
        while sweeps < params.max_inner_iters {
            sweeps += 1;
            let phi = solve_phi(&rho, &prev.phi, &params)?;
            let sub = self.solve_rho(&prev.rho, &phi, &params)?;
            sinkhorn_iterations += sub.iterations;
            rho = sub.rho.clone();
            let value = penalized(&rho, &phi, &prev.phi, sub.transport.cost, &params)?;
            let decrease = best - value;
            best = best.min(value);
            solved = Some(sub);
            // Without coupling the two substeps are independent.
            if !params.coupled() || decrease < params.inner_tol {
                break;
            }
        }
        let sub = solved.expect("at least one sweep runs");
        let phi = solve_phi(&rho, &prev.phi, &params)?;
        let penalized_value = penalized(&rho, &phi, &prev.phi, sub.transport.cost, &params)?;
        let energy_after = free_energy(&rho, &phi, &params)?.total;
        let gap = penalized_value - energy_before;
        let slack = params.accept_slack();
        if gap > slack {
            return Err(Error::StepRejected { gap: gap.as_f64(), slack: slack.as_f64() });
        }

        let dphi = phi.field().zip_map(prev.phi.field(), |a, b| a - b);
        let state = State { rho, phi, time: prev.time + step };
        let (el_residual_rho, el_residual_phi) = el_residuals(&state, prev, &params, &sub.transport)?;
        let boundary_mass = frame_integral(state.rho.field(), BOUNDARY_LAYERS);
        // The accepted density becomes the next anchor.
        self.warm.q_anchor = self.warm.q.clone();
        let diagnostics = StepDiagnostics {
            wasserstein_sq: sub.transport.cost,
            l2_sq: inner(&dphi, &dphi),
            penalized_value,
            inner_iterations: sweeps,
            energy_before,
            energy_after,
            el_residual_rho,
            el_residual_phi,
            sinkhorn_iterations,
            mass_drift: sub.mass_drift,
            boundary_mass,
        };
        Ok(StepOutcome { state, diagnostics, transport: sub.transport })
    }

    fn solve_rho(&mut self, rho_prev: &Density<T>, phi: &Potential<T>, params: &SchemeParams<T>) -> Result<RhoSolve<T>> {
        rho_solve(&self.kernel, &mut self.warm, rho_prev, phi, params)
    }
}

struct RhoSolve<T> {
    rho: Density<T>,
    transport: TransportResult<T>,
    mass_drift: T,
    iterations: usize,
}

fn rho_solve<T: Real>(
    kernel: &GibbsKernel<T>,
    warm: &mut ProxWarmStart<T>,
    rho_prev: &Density<T>,
    phi: &Potential<T>,
    params: &SchemeParams<T>,
) -> Result<RhoSolve<T>> {
    rho_prev.grid().check_same(phi.grid())?;
    let chi = params.chi;
    let drive = params.coupled().then(|| phi.field().values().mapv(|v| chi * v));
    let b = rho_prev.masses();
    let out = entropic_prox(
        kernel,
        &b,
        drive.as_ref(),
        params.step,
        warm,
        params.sinkhorn_tol,
        params.max_sinkhorn_iters,
    )?;
    let rho = Density::from_masses(*rho_prev.grid(), out.masses.clone())?;
    let transport = entropic_result(kernel, out.masses, out.divergence)?;
    Ok(RhoSolve { rho, transport, mass_drift: out.mass_drift, iterations: out.iterations })
}

/// `(τ/h + α - Δ)φ = (τ/h)φ_prev + ρ`; the source is dropped without coupling.
fn solve_phi<T: Real>(rho: &Density<T>, phi_prev: &Potential<T>, params: &SchemeParams<T>) -> Result<Potential<T>> {
    rho.grid().check_same(phi_prev.grid())?;
    let rate = params.tau / params.step;
    let rhs = if params.coupled() {
        phi_prev.field().zip_map(rho.field(), |p, r| rate * p + r)
    } else {
        phi_prev.field().scale(rate)
    };
    let sol = helmholtz_solve(rate + params.alpha, &rhs, Some(phi_prev.field()), T::lit(PHI_TOL).max(T::lit(64.0) * T::epsilon()))?;
    Ok(Potential::new(sol.solution))
}

/// `E[ρ, φ] + (1/2h)[cost/χ + τ‖φ - φ_prev‖²]`.
fn penalized<T: Real>(
    rho: &Density<T>,
    phi: &Potential<T>,
    phi_prev: &Potential<T>,
    cost: T,
    params: &SchemeParams<T>,
) -> Result<T> {
    let energy = free_energy(rho, phi, params)?.total;
    let d = phi.field().zip_map(phi_prev.field(), |a, b| a - b);
    let l2 = inner(&d, &d);
    Ok(energy + (cost / params.chi + params.tau * l2) / (T::lit(2.0) * params.step))
}

/// Minimizer in φ of the step functional at fixed ρ.
pub fn phi_substep<T: Real>(rho: &Density<T>, phi_prev: &Potential<T>, params: &SchemeParams<T>) -> Result<Potential<T>> {
    params.validate()?;
    solve_phi(rho, phi_prev, params)
}

/// Minimizer in ρ of `(1/2hχ)d²(ρ, ρ_prev) + (1/χ)∫ρ log ρ - ∫ρφ`, with the
/// debiased Sinkhorn divergence standing in for `d_W²`.
pub fn rho_substep<T: Real>(
    rho_prev: &Density<T>,
    phi: &Potential<T>,
    params: &SchemeParams<T>,
) -> Result<(Density<T>, TransportResult<T>)> {
    params.validate()?;
    let kernel = GibbsKernel::new(*rho_prev.grid(), params.entropic_eps, params.sinkhorn_mode)?;
    let sub = rho_solve(&kernel, &mut ProxWarmStart::default(), rho_prev, phi, params)?;
    Ok((sub.rho, sub.transport))
}

/// One step with cold-started transport potentials.
pub fn jko_step<T: Real>(prev: &State<T>, params: &SchemeParams<T>) -> Result<(State<T>, StepDiagnostics<T>)> {
    let out = Stepper::new(*prev.grid(), *params)?.step(prev)?;
    Ok((out.state, out.diagnostics))
}

/// The same one-step problem with step size `offset` in place of `h`.
pub fn de_giorgi_interpolant<T: Real>(prev_anchor: &State<T>, params: &SchemeParams<T>, offset: T) -> Result<State<T>> {
    if !(offset > T::zero()) || offset > params.step {
        return Err(Error::invalid(format!("offset must lie in (0, {}], got {offset}", params.step)));
    }
    let out = Stepper::new(*prev_anchor.grid(), *params)?.step_sized(prev_anchor, None, offset)?;
    Ok(out.state)
}

/// Number of steps needed to reach `horizon`.
pub fn step_count<T: Real>(horizon: T, step: T) -> usize {
    let n = (horizon / step - T::lit(1e-9)).ceil().as_f64();
    if n > 0.0 {
        n as usize
    } else {
        0
    }
}

/// Runs `⌈T/h⌉` steps, calling `observe(prev, outcome)` after each accepted one.
pub fn run_observed<T: Real>(
    initial: State<T>,
    params: &SchemeParams<T>,
    horizon: T,
    mut observe: impl FnMut(&State<T>, &StepOutcome<T>),
) -> std::result::Result<Trajectory<T>, RunFailure<T>> {
    let mut traj = Trajectory { states: vec![initial], diagnostics: Vec::new(), params: *params };
    let fail = |source, traj| Err(RunFailure { source, partial: Box::new(traj) });
    if !(horizon >= T::zero()) || !horizon.is_finite() {
        return fail(Error::invalid(format!("horizon must be finite and nonnegative, got {horizon}")), traj);
    }
    let mut stepper = match Stepper::new(*traj.initial().grid(), *params) {
        Ok(s) => s,
        Err(e) => return fail(e, traj),
    };
    for _ in 0..step_count(horizon, params.step) {
        let prev = traj.last();
        let out = match stepper.step(prev) {
            Ok(out) => out,
            Err(e) => return fail(e, traj),
        };
        observe(prev, &out);
        let boundary = out.diagnostics.boundary_mass;
        traj.states.push(out.state);
        traj.diagnostics.push(out.diagnostics);
        if boundary.as_f64() > BOUNDARY_MASS_LIMIT {
            let err = Error::BoundaryMass { mass: boundary.as_f64(), limit: BOUNDARY_MASS_LIMIT };
            return fail(err, traj);
        }
    }
    Ok(traj)
}

pub fn run<T: Real>(
    initial: State<T>,
    params: &SchemeParams<T>,
    horizon: T,
) -> std::result::Result<Trajectory<T>, RunFailure<T>> {
    run_observed(initial, params, horizon, |_, _| {})
}

/// `φ₀` solving `(α - Δ)φ₀ = ρ₀`.
pub fn elliptic_potential<T: Real>(rho: &Density<T>, alpha: T) -> Result<Potential<T>> {
    let sol = helmholtz_solve(alpha, rho.field(), None, T::lit(1e-12))?;
    Ok(Potential::new(sol.solution))
}

/// `d²(u₁, u₂) = d_W²(ρ₁, ρ₂)/χ + τ‖φ₁ - φ₂‖²` with the entropic `d_W²`.
pub fn product_distance_sq<T: Real>(a: &State<T>, b: &State<T>, params: &SchemeParams<T>) -> Result<T> {
    a.grid().check_same(b.grid())?;
    let w = crate::transport::wasserstein_entropic(&a.rho, &b.rho, params)?.cost;
    let d: ScalarField<T> = a.phi.field().zip_map(b.phi.field(), |x, y| x - y);
    Ok(w / params.chi + params.tau * inner(&d, &d))
}

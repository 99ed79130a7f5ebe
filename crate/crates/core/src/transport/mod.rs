//! Squared Wasserstein distances between grid densities.
//!
//! [`wasserstein_exact`] solves the Kantorovich linear program on small grids
//! and serves as the reference. [`wasserstein_entropic`] reports the debiased
//! Sinkhorn divergence, which matches `d_W²` up to `O(eps²)` and scales to the
//! grids the time stepper runs on.

mod entropic;
mod exact;
mod kernel;
mod prox;

use ndarray::Array2;

pub use entropic::{divergence, self_sinkhorn, sinkhorn, Divergence, DualPair, SelfDual};
pub use exact::{solve_transport, ExactSolution, Site};
pub use kernel::{GibbsKernel, SinkhornMode};
pub use prox::{entropic_prox, ProxOutcome, ProxWarmStart};

use crate::energy::{Density, SchemeParams};
use crate::error::{Error, Result};
use crate::grid::{Grid2D, VectorField};
use crate::scalar::Real;

/// Largest grid (in cells) accepted by the exact solver.
pub const EXACT_CELL_CAP: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    ExactPlan,
    EntropicPotentials,
}

/// How the optimal coupling is represented.
#[derive(Debug, Clone)]
pub enum Plan<T> {
    /// `(source cell, target cell, mass)` with cells in flat row-major order.
    Exact(Vec<(usize, usize, T)>),
    /// Gibbs potentials of the cross problem and of both self problems.
    Entropic { eps: T, f: Array2<T>, g: Array2<T>, q_source: Array2<T>, q_target: Array2<T> },
}

#[derive(Debug, Clone)]
pub struct TransportResult<T> {
    /// Squared transport cost; debiased for entropic plans.
    pub cost: T,
    pub plan_kind: PlanKind,
    /// Max absolute per-cell violation of either marginal, in mass units.
    pub marginal_error: T,
    /// Plan-averaged image of every source cell; identity where the source is empty.
    pub barycentric_map: VectorField<T>,
    pub plan: Plan<T>,
    source: Array2<T>,
}

impl<T: Real> TransportResult<T> {
    /// Per-cell masses of the first marginal.
    pub fn source_masses(&self) -> &Array2<T> {
        &self.source
    }

    pub fn grid(&self) -> &Grid2D<T> {
        self.barycentric_map.grid()
    }

    /// `∫|T(x) - x|² dμ` from the stored map.
    pub fn map_cost(&self) -> T {
        let grid = *self.grid();
        let id = VectorField::identity(grid);
        let mut total = T::zero();
        for ((ij, &m), (&tx, &ty)) in self
            .source
            .indexed_iter()
            .zip(self.barycentric_map.x_values.iter().zip(self.barycentric_map.y_values.iter()))
        {
            let dx = tx - id.x_values[ij];
            let dy = ty - id.y_values[ij];
            total += m * (dx * dx + dy * dy);
        }
        total
    }
}

/// Exact `d_W²` by network simplex; refuses grids above [`EXACT_CELL_CAP`] cells.
pub fn wasserstein_exact<T: Real>(mu: &Density<T>, nu: &Density<T>) -> Result<TransportResult<T>> {
    let grid = *mu.grid();
    grid.check_same(nu.grid())?;
    if grid.cell_count() > EXACT_CELL_CAP {
        return Err(Error::Capacity { cells: grid.cell_count(), cap: EXACT_CELL_CAP });
    }
    let (a, b) = (mu.masses(), nu.masses());
    let xs = grid.centers();
    let n = grid.n();
    let support = |m: &Array2<T>| -> (Vec<Site<T>>, Vec<usize>) {
        let mut sites = Vec::new();
        let mut cells = Vec::new();
        for ((i, j), &v) in m.indexed_iter() {
            if v > T::zero() {
                sites.push(Site { x: xs[i], y: xs[j], mass: v });
                cells.push(i * n + j);
            }
        }
        (sites, cells)
    };
    let (src, src_cells) = support(&a);
    let (dst, dst_cells) = support(&b);
    let sol = solve_transport(&src, &dst)?;

    let mut rows = Array2::<T>::zeros((n, n));
    let mut cols = Array2::<T>::zeros((n, n));
    let mut tx = Array2::<T>::zeros((n, n));
    let mut ty = Array2::<T>::zeros((n, n));
    let mut flows = Vec::with_capacity(sol.flows.len());
    for &(s, t, m) in &sol.flows {
        let (sc, tc) = (src_cells[s], dst_cells[t]);
        let (si, sj, ti, tj) = (sc / n, sc % n, tc / n, tc % n);
        rows[[si, sj]] += m;
        cols[[ti, tj]] += m;
        tx[[si, sj]] += m * xs[ti];
        ty[[si, sj]] += m * xs[tj];
        flows.push((sc, tc, m));
    }
    let mut map = VectorField::identity(grid);
    for ((ij, &r), (&sx, &sy)) in rows.indexed_iter().zip(tx.iter().zip(ty.iter())) {
        if r > T::zero() {
            map.x_values[ij] = sx / r;
            map.y_values[ij] = sy / r;
        }
    }
    let marginal_error = entropic::max_abs_diff(&rows, &a).max(entropic::max_abs_diff(&cols, &b));
    Ok(TransportResult {
        cost: sol.cost,
        plan_kind: PlanKind::ExactPlan,
        marginal_error,
        barycentric_map: map,
        plan: Plan::Exact(flows),
        source: a,
    })
}

/// Debiased Sinkhorn divergence with `params.entropic_eps`.
///
/// Cold starts anneal `eps` geometrically from the scale of the box so the
/// final iterations begin from nearly optimal potentials.
pub fn wasserstein_entropic<T: Real>(
    mu: &Density<T>,
    nu: &Density<T>,
    params: &SchemeParams<T>,
) -> Result<TransportResult<T>> {
    let grid = *mu.grid();
    grid.check_same(nu.grid())?;
    let eps = params.entropic_eps;
    if !(eps > T::zero()) || !eps.is_finite() {
        return Err(Error::invalid(format!("entropic_eps must be positive, got {eps}")));
    }
    let (a, b) = (mu.masses(), nu.masses());
    let tol = params.sinkhorn_tol;
    let iters = params.max_sinkhorn_iters;

    let mut warm: Option<(Array2<T>, Array2<T>)> = None;
    let mut stage = grid.box_area() * T::lit(0.05);
    while stage > eps * T::lit(2.0) {
        let k = GibbsKernel::new(grid, stage, params.sinkhorn_mode)?;
        let loose = tol.max(T::lit(1e-6));
        let r = sinkhorn(&k, &a, &b, warm.as_ref().map(|(f, g)| (f, g)), loose, iters)?;
        warm = Some((r.f, r.g));
        stage = stage * T::lit(0.5);
    }
    let kernel = GibbsKernel::new(grid, eps, params.sinkhorn_mode)?;
    let cross = sinkhorn(&kernel, &a, &b, warm.as_ref().map(|(f, g)| (f, g)), tol, iters)?;
    let self_a = self_sinkhorn(&kernel, &a, Some(&cross.f), tol, iters)?;
    let self_b = self_sinkhorn(&kernel, &b, Some(&cross.g), tol, iters)?;
    let half = T::lit(0.5);
    let value = cross.value - half * (self_a.value + self_b.value);
    let div = Divergence { value, cross, self_a, self_b };
    entropic_result(&kernel, a, div)
}

/// Packages a converged divergence computation (source `a`) as a [`TransportResult`].
pub(crate) fn entropic_result<T: Real>(
    kernel: &GibbsKernel<T>,
    a: Array2<T>,
    div: Divergence<T>,
) -> Result<TransportResult<T>> {
    let marginal_error = div.marginal_error();
    let map = debiased_barycentric_map(kernel, &a, &div.cross.g, &div.self_a.q)?;
    Ok(TransportResult {
        cost: div.value.max(T::zero()),
        plan_kind: PlanKind::EntropicPotentials,
        marginal_error,
        barycentric_map: map,
        plan: Plan::Entropic {
            eps: kernel.eps(),
            f: div.cross.f,
            g: div.cross.g,
            q_source: div.self_a.q,
            q_target: div.self_b.q,
        },
        source: a,
    })
}

/// Plan average `Σ_j γ_ij y_j / Σ_j γ_ij` for a Gibbs plan whose target
/// potential is `g`; returns the x and y components.
fn gibbs_average<T: Real>(kernel: &GibbsKernel<T>, g: &Array2<T>) -> Result<(Array2<T>, Array2<T>)> {
    let grid = kernel.grid();
    let eps = kernel.eps();
    let xs = grid.centers();
    // Shift coordinates to be positive so their logs exist.
    let shift = grid.half_width() + T::one();
    let gs = g.mapv(|v| v / eps);
    let base = kernel.log_apply(&gs)?;
    let with_x = kernel.log_apply(&ndarray::Zip::indexed(&gs).map_collect(|(i, _), &v| v + (xs[i] + shift).ln()))?;
    let with_y = kernel.log_apply(&ndarray::Zip::indexed(&gs).map_collect(|(_, j), &v| v + (xs[j] + shift).ln()))?;
    let tx = ndarray::Zip::from(&with_x).and(&base).map_collect(|&w, &z| (w - z).exp() - shift);
    let ty = ndarray::Zip::from(&with_y).and(&base).map_collect(|&w, &z| (w - z).exp() - shift);
    Ok((tx, ty))
}

/// `⟨C, γ⟩` for the Gibbs plan with potentials `f` (rows) and `g` (columns),
/// without the entropy term.
pub(crate) fn plan_cost<T: Real>(kernel: &GibbsKernel<T>, f: &Array2<T>, g: &Array2<T>) -> Result<T> {
    let grid = kernel.grid();
    let eps = kernel.eps();
    let xs = grid.centers();
    let shift = grid.half_width() + T::one();
    let gs = g.mapv(|v| v / eps);
    let base = kernel.log_apply(&gs)?;
    let weighted = |w: &dyn Fn(usize, usize) -> T| -> Result<Array2<T>> {
        kernel.log_apply(&ndarray::Zip::indexed(&gs).map_collect(|(i, j), &v| v + w(i, j).ln()))
    };
    let ex = weighted(&|i, _| xs[i] + shift)?;
    let ey = weighted(&|_, j| xs[j] + shift)?;
    let ex2 = weighted(&|i, _| (xs[i] + shift) * (xs[i] + shift))?;
    let ey2 = weighted(&|_, j| (xs[j] + shift) * (xs[j] + shift))?;
    let mut total = Vec::with_capacity(f.len());
    for ((i, j), &fi) in f.indexed_iter() {
        let z = base[[i, j]];
        let row = fi / eps + z;
        if !row.is_finite() {
            continue;
        }
        let mass = row.exp();
        let (px, py) = (xs[i] + shift, xs[j] + shift);
        let m1x = (ex[[i, j]] - z).exp();
        let m1y = (ey[[i, j]] - z).exp();
        let m2x = (ex2[[i, j]] - z).exp();
        let m2y = (ey2[[i, j]] - z).exp();
        total.push(mass * (m2x - T::lit(2.0) * px * m1x + px * px + m2y - T::lit(2.0) * py * m1y + py * py));
    }
    Ok(crate::scalar::compensated_sum(total))
}

/// Transport cost `⟨C, γ⟩` of the cross plan of an entropic result, without
/// the entropy term or debiasing. Exact results return their cost.
pub fn entropic_plan_cost<T: Real>(result: &TransportResult<T>) -> Result<T> {
    match &result.plan {
        Plan::Exact(_) => Ok(result.cost),
        Plan::Entropic { eps, f, g, .. } => {
            let kernel = GibbsKernel::new(*result.grid(), *eps, SinkhornMode::LogDomain)?;
            plan_cost(&kernel, f, g)
        }
    }
}

/// `x + T_cross(x) - T_self(x)`: the entropic barycentric map with the blur
/// of the self-transport plan removed, consistent with the debiased cost.
fn debiased_barycentric_map<T: Real>(
    kernel: &GibbsKernel<T>,
    a: &Array2<T>,
    g: &Array2<T>,
    q: &Array2<T>,
) -> Result<VectorField<T>> {
    let grid = *kernel.grid();
    let (cx, cy) = gibbs_average(kernel, g)?;
    let (sx, sy) = gibbs_average(kernel, q)?;
    let mut map = VectorField::identity(grid);
    for (ij, &m) in a.indexed_iter() {
        if m > T::zero() {
            map.x_values[ij] += cx[ij] - sx[ij];
            map.y_values[ij] += cy[ij] - sy[ij];
        }
    }
    Ok(map)
}

/// The map stored in `result`, after checking that `mu` is its source marginal.
pub fn barycentric_map<T: Real>(result: &TransportResult<T>, mu: &Density<T>) -> Result<VectorField<T>> {
    result.grid().check_same(mu.grid())?;
    let tol = (result.marginal_error * T::lit(10.0)).max(T::lit(1e-12));
    let gap = entropic::max_abs_diff(&mu.masses(), &result.source);
    if gap > tol {
        return Err(Error::invalid(format!(
            "density is not the source marginal of the plan (max cell gap {gap:e})"
        )));
    }
    Ok(result.barycentric_map.clone())
}

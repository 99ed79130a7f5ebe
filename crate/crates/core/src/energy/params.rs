use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{integrate, Grid2D, ScalarField};
use crate::scalar::Real;
use crate::transport::SinkhornMode;

/// Which parts of the free energy drive the flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    #[default]
    Full,
    /// Drop the `-∫ρφ` coupling: ρ follows the heat flow, φ relaxes without a source.
    DiffusionOnly,
}

/// Model coefficients, time step and solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeParams<T> {
    pub chi: T,
    pub tau: T,
    pub alpha: T,
    pub step: T,
    pub entropic_eps: T,
    /// Stop alternating sweeps once `F` drops by less than this.
    pub inner_tol: T,
    /// Max absolute cell-mass marginal violation accepted from Sinkhorn.
    pub sinkhorn_tol: T,
    pub max_inner_iters: usize,
    pub max_sinkhorn_iters: usize,
    pub sinkhorn_mode: SinkhornMode,
    pub mode: FlowMode,
}

impl<T: Real> Default for SchemeParams<T> {
    fn default() -> Self {
        Self {
            chi: T::lit(4.0) * T::PI(),
            tau: T::one(),
            alpha: T::one(),
            step: T::lit(1e-3),
            entropic_eps: T::lit(1.5625e-2),
            inner_tol: T::lit(1e-10),
            sinkhorn_tol: T::lit(1e-11),
            max_inner_iters: 20,
            max_sinkhorn_iters: 20_000,
            sinkhorn_mode: SinkhornMode::Auto,
            mode: FlowMode::Full,
        }
    }
}

impl<T: Real> SchemeParams<T> {
    /// Default parameters with `entropic_eps` set by the grid/step coupling rule.
    pub fn for_grid(grid: &Grid2D<T>, step: T) -> Self {
        let mut p = Self { step, ..Self::default() };
        p.entropic_eps = default_entropic_eps(grid, step);
        p
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("chi", self.chi),
            ("tau", self.tau),
            ("alpha", self.alpha),
            ("step", self.step),
            ("entropic_eps", self.entropic_eps),
            ("inner_tol", self.inner_tol),
            ("sinkhorn_tol", self.sinkhorn_tol),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_inner_iters == 0 {
            return Err(Error::Config("max_inner_iters must be >= 1".into()));
        }
        if self.max_sinkhorn_iters == 0 {
            return Err(Error::Config("max_sinkhorn_iters must be >= 1".into()));
        }
        Ok(())
    }

    pub fn subcritical(&self) -> bool {
        self.chi < T::lit(8.0) * T::PI()
    }

    /// Tolerance on the one-step dissipation inequality.
    pub fn accept_slack(&self) -> T {
        T::lit(10.0) * (self.sinkhorn_tol + self.inner_tol)
    }

    pub fn with_step(&self, step: T) -> Self {
        Self { step, ..*self }
    }

    pub(crate) fn coupled(&self) -> bool {
        self.mode == FlowMode::Full
    }
}

/// `max(Δx², h (2L)² 1e-2)`: the blur stays at grid scale unless the step is long.
pub fn default_entropic_eps<T: Real>(grid: &Grid2D<T>, step: T) -> T {
    grid.cell_area().max(step * grid.box_area() * T::lit(1e-2))
}

/// Nonnegative grid function of unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Density<T> {
    field: ScalarField<T>,
}

impl<T: Real> Density<T> {
    /// Mass tolerance accepted by [`Density::new`].
    pub const MASS_TOL: f64 = 1e-9;

    pub fn new(field: ScalarField<T>) -> Result<Self> {
        if field.values().iter().any(|&v| v < T::zero()) {
            return Err(Error::invalid("density has negative values"));
        }
        let mass = integrate(&field);
        if (mass - T::one()).abs().as_f64() > Self::MASS_TOL {
            return Err(Error::invalid(format!("density mass is {mass}, expected 1")));
        }
        Ok(Self { field })
    }

    /// Rescales a nonnegative, nonzero field to unit mass.
    pub fn normalized(field: ScalarField<T>) -> Result<Self> {
        if field.values().iter().any(|&v| v < T::zero()) {
            return Err(Error::invalid("density has negative values"));
        }
        let mass = integrate(&field);
        if !(mass > T::zero()) || !mass.is_finite() {
            return Err(Error::invalid(format!("cannot normalize a field of mass {mass}")));
        }
        Ok(Self { field: field.scale(T::one() / mass) })
    }

    /// Density from per-cell masses (summing to one).
    pub(crate) fn from_masses(grid: Grid2D<T>, masses: ndarray::Array2<T>) -> Result<Self> {
        let inv = T::one() / grid.cell_area();
        Self::normalized(ScalarField::new(grid, masses.mapv(|m| m * inv))?)
    }

    pub fn uniform(grid: Grid2D<T>) -> Self {
        Self { field: ScalarField::constant(grid, T::one() / grid.box_area()) }
    }

    pub fn field(&self) -> &ScalarField<T> {
        &self.field
    }

    pub fn grid(&self) -> &Grid2D<T> {
        self.field.grid()
    }

    pub fn mass(&self) -> T {
        integrate(&self.field)
    }

    /// Per-cell masses `ρ_i Δx²`.
    pub fn masses(&self) -> ndarray::Array2<T> {
        let area = self.grid().cell_area();
        self.field.values().mapv(|v| v * area)
    }

    pub fn into_field(self) -> ScalarField<T> {
        self.field
    }
}

/// Chemoattractant concentration; any finite grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential<T> {
    field: ScalarField<T>,
}

impl<T: Real> Potential<T> {
    pub fn new(field: ScalarField<T>) -> Self {
        Self { field }
    }

    pub fn zeros(grid: Grid2D<T>) -> Self {
        Self { field: ScalarField::zeros(grid) }
    }

    pub fn field(&self) -> &ScalarField<T> {
        &self.field
    }

    pub fn grid(&self) -> &Grid2D<T> {
        self.field.grid()
    }

    pub fn into_field(self) -> ScalarField<T> {
        self.field
    }
}

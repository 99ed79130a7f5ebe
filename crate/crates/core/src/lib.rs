//! Hybrid Wasserstein × L² minimizing-movement solver for the parabolic-parabolic
//! Keller-Segel system on a truncated plane, with per-step certification of the
//! discrete dissipation identities and functional inequalities of the scheme.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix `f64`, which is what the solver is tuned for.

pub mod cli_io;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod grid;
pub mod scalar;
pub mod scheme;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Grid = grid::Grid2D<f64>;
pub type Field = grid::ScalarField<f64>;
pub type Vector = grid::VectorField<f64>;
pub type Params = energy::SchemeParams<f64>;
pub type Rho = energy::Density<f64>;
pub type Phi = energy::Potential<f64>;
pub type State = scheme::State<f64>;
pub type Trajectory = scheme::Trajectory<f64>;

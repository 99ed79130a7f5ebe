use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid too large for the exact transport oracle: {cells} cells (cap {cap})")]
    Capacity { cells: usize, cap: usize },

    #[error("Sinkhorn did not converge in {iterations} iterations (marginal error {marginal_error:e})")]
    Diverged { iterations: usize, marginal_error: f64 },

    #[error("Gibbs kernel underflow at eps = {eps:e}; use the log-domain mode")]
    Underflow { eps: f64 },

    #[error("linear solver breakdown after {} iterations (last relative residual {:e})", residuals.len(), residuals.last().copied().unwrap_or(f64::NAN))]
    Solver { residuals: Vec<f64> },

    #[error("step rejected: one-step dissipation violated by {gap:e} (slack {slack:e})")]
    StepRejected { gap: f64, slack: f64 },

    #[error("boundary layer carries mass {mass:e} (limit {limit:e}); enlarge half_width")]
    BoundaryMass { mass: f64, limit: f64 },

    #[error("exp overflow in Onofri check: max(psi) = {max_value}")]
    Overflow { max_value: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

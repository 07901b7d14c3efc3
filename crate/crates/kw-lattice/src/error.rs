use thiserror::Error;

/// Errors produced by the lattice library.
#[derive(Debug, Error)]
pub enum KwError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("linear solver failed: {message} (residual {residual:e})")]
    LinearSolver { message: String, residual: f64 },
    #[error("iteration did not converge after {iterations} steps (last update norm {last_update:e})")]
    NonConvergence {
        iterations: usize,
        last_update: f64,
        history: Vec<f64>,
    },
    #[error("consistency check failed: {0}")]
    Consistency(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KwError>;

pub(crate) fn argument<T>(msg: impl Into<String>) -> Result<T> {
    Err(KwError::Argument(msg.into()))
}

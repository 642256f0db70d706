use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An invariant that holds in exact arithmetic broke down; this indicates a bug.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("energy identity violated at step {step}: residual {residual:e} exceeds {limit:e}")]
    EnergyIdentity { step: usize, residual: f64, limit: f64 },

    #[error("mass drift at step {step}: |mean - mean0| = {drift:e} exceeds {limit:e}")]
    MassDrift { step: usize, drift: f64, limit: f64 },

    #[error("iteration did not converge after {iterations} iterations (residual {residual:e}, best estimate {best:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        best: f64,
    },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

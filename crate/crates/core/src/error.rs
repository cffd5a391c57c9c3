use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("singular direction at component {index}: probability is zero but velocity is {velocity}")]
    SingularDirection { index: usize, velocity: f64 },

    #[error("state lies on the simplex boundary (component {0} is zero)")]
    BoundaryState(usize),

    #[error("did not converge after {steps} steps (residual {residual:e})")]
    NotConverged { steps: usize, residual: f64 },

    #[error("step {step} rejected: {reason}")]
    StepRejected { step: usize, reason: String },

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("graph is stale: parameters changed after it was recorded")]
    StaleGraph,

    #[error("{0} is not prime")]
    NotPrime(u64),

    #[error("schema mismatch in {path}: expected {expected}, found {found}")]
    Schema { path: PathBuf, expected: String, found: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("plot: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

use thiserror::Error;

/// Errors raised across the modeling, control and simulation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix of dimension {dim} is not positive definite (largest jitter tried: {max_jitter:e})")]
    NotPositiveDefinite { dim: usize, max_jitter: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("hyperparameter training diverged: {0}")]
    TrainingDiverged(String),

    #[error("series too short: {len} samples, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },

    #[error("QP solver failed{}: {reason}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    SolverFailure { step: Option<usize>, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed log: {0}")]
    MalformedLog(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad
    /// input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Domain(_)
                | Error::TrainingDiverged(_)
                | Error::SolverFailure { .. }
        )
    }

    pub(crate) fn at_step(self, k: usize) -> Self {
        match self {
            Error::SolverFailure { reason, .. } => Error::SolverFailure { step: Some(k), reason },
            other => other,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

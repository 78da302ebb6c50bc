use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QlaError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient blocks: k_n = {k_n} (need at least 3)")]
    InsufficientBlocks { k_n: usize },
    #[error("insufficient data: have {have} observations, need {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("path exploded at grid index {index} (|x| = {magnitude:e})")]
    PathExploded { index: usize, magnitude: f64 },
    #[error("non-PD weight matrix at block {block}")]
    NonPositiveDefinite { block: usize },
    #[error("point outside admissible set: {0}")]
    OutsideAdmissibleSet(String),
    #[error("optimizer stalled: no restart converged within {max_iterations} iterations")]
    OptimizerStalled { max_iterations: usize },
    #[error("posterior mass underflow")]
    PosteriorUnderflow,
    #[error("J singular: information matrix is not positive definite")]
    JSingular,
    #[error("non-finite average in invariant expectation")]
    NonFiniteAverage,
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("all replications failed")]
    AllReplicationsFailed,
    #[error("I/O error at {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, QlaError>;

impl QlaError {
    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        QlaError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric positive definite (pivot {pivot} at row {row})")]
    SingularSystem { row: usize, pivot: f64 },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("label is zero; relative loss is undefined")]
    DegenerateLabel,

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("degenerate innovation covariance: {0}")]
    DegenerateInnovation(String),

    #[error("constant window (min = max = {0}); cannot min-max scale")]
    DegenerateScale(f64),

    #[error("series too short: need at least {needed} values, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("observation at step {0} is zero; relative error is undefined")]
    ZeroObservation(usize),

    #[error("no forecast records to score")]
    EmptyRecords,

    #[error("run aborted after {0} consecutive non-finite predictions")]
    RunAborted(usize),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "exponential blowup: K^M = {k}^{m} product components exceeds the enumeration cap of {cap}"
    )]
    ExponentialBlowup { k: usize, m: usize, cap: usize },

    #[error("non-finite model evaluation at component {component}")]
    NonFinite { component: usize },

    #[error("initialization failed: objective non-finite after {attempts} draws")]
    InitializationFailure { attempts: usize },

    #[error("data validation: {0}")]
    DataValidation(String),

    #[error("configuration: {0}")]
    Configuration(String),

    #[error("fit failed on shard(s) {shards:?}: {reason}")]
    FitFailures { shards: Vec<usize>, reason: String },

    #[error("collection failed for shard {shard} ({path}): {reason}")]
    Collection { shard: usize, path: PathBuf, reason: String },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("clustering produced no clusters ({outliers} of {total} samples are outliers); try a larger eps")]
    NoClusters { outliers: usize, total: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {terms}")]
    NonFiniteLoss { epoch: usize, batch: usize, terms: String },

    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: usize },

    #[error("bad file name {path:?}: {reason}")]
    BadFileName { path: PathBuf, reason: String },

    #[error("cannot decode image {path:?}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

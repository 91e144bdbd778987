use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SodError {
    #[error("shape mismatch in {op}: {a:?} vs {b:?}")]
    ShapeMismatch { op: &'static str, a: (usize, usize), b: (usize, usize) },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("no salient region: edge mask is empty")]
    NoSalientRegion,
    #[error("input size {h}x{w} rejected: sides must be multiples of 32 and at least 64")]
    InputSize { h: usize, w: usize },
    #[error("non-finite values after {block}")]
    NonFinite { block: String },
    #[error("non-finite loss at step {step} (batch {batch_id})")]
    NonFiniteLoss { step: usize, batch_id: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config hash {expected} does not match checkpoint hash {found}")]
    ConfigMismatch { expected: String, found: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] sodnet_tensor::TensorError),
}

impl SodError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SodError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = SodError> = std::result::Result<T, E>;

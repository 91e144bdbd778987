use thiserror::Error;

use crate::tensor::Shape;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("{op}: incompatible shapes {a} and {b}")]
    Mismatch { op: &'static str, a: Shape, b: Shape },
    #[error("cannot broadcast {0} with {1}")]
    Broadcast(Shape, Shape),
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("empty input")]
    Empty,
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

//! Minimal NCHW tensor library with reverse-mode autodiff for CPU training.
//!
//! The op set is exactly what the saliency network needs: strided/padded
//! convolution, broadcasting add/mul, ReLU, sigmoid, group normalization,
//! adaptive average pooling, bilinear resizing, channel concatenation and
//! clamping. Everything is generic over [`Scalar`] so the same model code runs
//! in `f32` for training and `f64` for finite-difference checks.

mod error;
mod graph;
pub mod kernels;
mod params;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{sigmoid, Gradients, Graph, NodeId};
pub use params::{Param, ParamGrads, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};

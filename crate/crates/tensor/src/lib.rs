//! Minimal dense tensors with a reverse-mode tape.
//!
//! Everything is laid out as `(batch, channels, height, width)` in row-major
//! order. A [`Graph`] records operations as they execute; calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! accumulates gradients into every leaf that was created with
//! `requires_grad`.
//!
//! The operation set is deliberately small: same-padded 2D convolution,
//! stride-2 transposed convolution, 2x2 max pooling, elementwise
//! nonlinearities and products, channel concatenation/slicing and a few
//! reductions. That is enough for convolutional LSTMs and small CNNs.

mod error;
mod graph;
mod kernels;
mod real;
mod tensor;

pub mod checkpoint;
pub mod rmm;

pub use error::TensorError;
pub use graph::{Graph, Var};
pub use kernels::{conv2d_forward, conv_transpose2_forward, max_pool2_forward};
pub use real::Real;
pub use tensor::{Shape, Tensor};

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

//! A compact reverse-mode automatic differentiation engine.
//!
//! Tensors are dense row-major `f64` arrays; image data uses NHWC layout so
//! that convolutions and per-pixel linear layers share one GEMM path.
//! A [`Graph`] records each op with its backward rule; calling
//! [`Graph::backward`] on a scalar yields gradients for every parameter leaf.

mod attention;
mod conv;
pub mod gemm;
mod graph;
mod loss;
mod norm;
mod ops;
mod resize;
mod tensor;

pub use conv::conv_out_len;
pub use graph::{Gradients, Graph, Var};
pub use loss::bce_logit_scalar;
pub use norm::softmax_in_place;
pub use ops::{gelu_scalar, sigmoid_scalar};
pub use resize::{bilinear_axis, resize_bilinear};
pub use tensor::Tensor;

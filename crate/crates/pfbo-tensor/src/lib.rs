//! Minimal dense-tensor substrate with reverse-mode automatic differentiation.
//!
//! Just enough machinery for a small transformer and exact-GP linear algebra:
//! contiguous `f32`/`f64` tensors, a tape-style [`Graph`] whose ops register
//! their own gradient rules, and jittered Cholesky factorization with
//! triangular solves. No GPU, no sparse storage, no broadcasting beyond a
//! trailing-suffix rule.

mod dtype;
mod error;
mod graph;
mod tensor;

pub mod linalg;

pub use dtype::{Dtype, Real};
pub use error::TensorError;
pub use graph::{Graph, Var};
pub use tensor::Tensor;

//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Values are row-major `f64` buffers ([`Tensor`]). A [`Tape`] records one
//! forward pass; [`Tape::backward`] returns gradients for every recorded
//! [`Var`] that depends on a parameter leaf.

mod gemm;
pub mod gradcheck;
mod tape;
mod tensor;

pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} cannot hold {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("index out of range in {op}: {detail}")]
    OutOfRange { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

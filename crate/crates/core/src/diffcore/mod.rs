//! Reverse-mode differentiation, constrained parameters and Adam.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{evaluate, finite_diff_check, gradient, Program};
pub use params::{Constraint, ParamId, ParamStore, Parameter};
pub use tape::{ConvGeom, Gradients, NodeId, Tape};
pub use tensor::{clip_nonnegative, Tensor};

pub(crate) use tensor::gemm;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape { node: usize, op: &'static str, detail: String },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("gradient requested for non-scalar output node {node} with shape {shape:?}")]
    NonScalarOutput { node: usize, shape: Vec<usize> },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
}

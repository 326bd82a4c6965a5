//! Deterministic `f64` numeric kernel: tensors, an expression graph over a
//! fixed catalog of differentiable primitives, reverse-mode gradients, Adam,
//! and a central-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
mod param;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::check_gradient;
pub use graph::{softmax_in_place, softmax_rows, Gradients, Graph, Var, MIN_GROUP_WEIGHT};
pub use param::{ParamId, Parameter, ParameterSet};
pub use tensor::Tensor;

pub(crate) use graph::euclidean;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("{op}: logarithm of non-positive value {value}")]
    NonPositiveLog { op: &'static str, value: f64 },
    #[error("{op}: row {row} has zero norm")]
    ZeroNorm { op: &'static str, row: usize },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("gradient root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
    #[error("finite-difference step must be in (0, 1e-2], got {0}")]
    InvalidStep(f64),
}

//! Minimal reverse-mode differentiation: tensors, a recording tape,
//! parameters with gradient slots, checkpoints, and a finite-difference
//! gradient checker.

pub mod checkpoint;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, gradcheck, GradcheckReport};
pub use params::{Gradients, Init, Param, ParamId, ParamStore};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalar { shape: Vec<usize> },
    #[error("tape already differentiated; run the forward pass again")]
    TapeConsumed,
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

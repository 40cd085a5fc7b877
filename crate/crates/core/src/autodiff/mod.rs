//! Minimal reverse-mode differentiation: tensors, a recording tape, dense
//! layers, and GRU cells.

pub mod gradcheck;
mod nn;
mod params;
mod tape;
mod tensor;

pub use nn::{
    gru_forward, mlp_forward, GruOutput, GruSpec, Mlp, MlpSpec, OutputTransform, LEAKY_SLOPE,
};
pub use params::{GradMap, ParamStore, ParamVars, PARAMS_VERSION};
pub use tape::{Bound, Tape, Unary, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("sequence has no time steps")]
    EmptySequence,
    #[error("backward needs a single-element loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("clamp bound violated at element {index}: lo {lo} > hi {hi}")]
    Bound { index: usize, lo: f64, hi: f64 },
    #[error("parameter `{0}` not found")]
    MissingParam(String),
    #[error("parameter file version `{found}` is not `{expected}`")]
    Version {
        found: String,
        expected: &'static str,
    },
    #[error("parameter file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parameter file: {0}")]
    Io(#[from] std::io::Error),
}

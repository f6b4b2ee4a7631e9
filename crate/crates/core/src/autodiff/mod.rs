//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! Just enough machinery for the two trainers: a per-step [`Tape`], MLP
//! layers, log-sum-exp, and Adam over a named [`ParamStore`].

mod mlp;
mod params;
mod tape;
mod tensor;

pub use mlp::{Activation, Mlp, MlpSpec, LEAKY_RELU_SLOPE};
pub use params::{AdamConfig, Checkpoint, CheckpointEntry, ParamStore, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tape::{log_sum_exp, logsumexp, selu, sigmoid, softplus, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tensor::gemm_strided;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape {shape:?} does not hold {len} values")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("expected a matrix, got shape {0:?}")]
    NotMatrix(Vec<usize>),
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("axis {0} out of range for a matrix")]
    BadAxis(usize),
    #[error("reduction over an empty axis")]
    EmptyAxis,
    #[error("column slice {start}..{end} out of range for {cols} columns")]
    BadSlice { start: usize, end: usize, cols: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarBackward(Vec<usize>),
    #[error("no parameter named {0:?}")]
    MissingParam(String),
    #[error("no gradient for parameter {0:?}")]
    MissingGradient(String),
    #[error("optimizer hyperparameters must be positive")]
    BadHyperparameter,
    #[error("invalid MLP spec: {0}")]
    BadSpec(String),
    #[error("layer {layer}: {detail}")]
    Layer { layer: String, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

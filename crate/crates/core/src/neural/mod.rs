//! Dense tensors, a reverse-mode tape, Adam and text checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use gradcheck::{gradient_check, GradCheck, GradCheckEntry};
pub use params::{glorot_uniform, init_rng, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuralError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("loss must be a single value, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("tape already consumed by a backward pass; record a new forward pass")]
    TapeConsumed,
    #[error("parameter set mismatch: {0}")]
    ParameterSetMismatch(String),
}

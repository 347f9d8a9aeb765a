//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! The engine is eager: every op on a [`Tape`] computes its value immediately
//! and records enough to replay the chain rule in reverse. Parameters live in
//! a [`ParamStore`] outside the tape, so a tape can be dropped after each
//! minibatch while gradients and AdaGrad state persist.
//!
//! Besides the usual arithmetic the tape offers the two value-transparent
//! nodes the disentangled model relies on: [`Tape::grl`] (negates the
//! upstream gradient) and [`Tape::stop_grad`] (emits no gradient).

mod adagrad;
mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use adagrad::{adagrad_step, AdaGrad};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{binary_xent, soft_xent, Gradients, NodeId, NodeKind, Tape, PROB_CLAMP};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("shape mismatch at node {node}: {detail}")]
    Shape { node: String, detail: String },
    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("embedding row {row} out of range for `{param}` with {rows} rows")]
    RowOutOfRange {
        param: String,
        row: usize,
        rows: usize,
    },
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

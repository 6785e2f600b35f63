//! Minimal dense neural networks with reverse-mode gradients.
//!
//! Networks are plain data ([`NetworkSpec`] + [`ParamSet`]); every operation
//! is a pure function of its inputs. Only what the federation protocol needs
//! is here: dense/ReLU/sigmoid stacks, softmax cross-entropy, SGD, Adam, parameter
//! EMA and a cosine-annealed learning-rate schedule.

mod graph;
mod optim;
mod params;
mod schedule;
mod spec;

use thiserror::Error;

pub use graph::{
    backward, forward, forward_trace, loss, loss_and_grad, predict, sigmoid, softmax_xent, value_and_grad, Trace,
};
pub use optim::{adam_step, ema_update, sgd_step, OptimState, OptimizerKind};
pub use params::{DenseParams, GradSet, ParamSet};
pub use schedule::{cosine_lr, LrSchedule};
pub use spec::{Layer, NetworkSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("layer {layer}: expected width {expected}, found {found}")]
    ShapeMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("parameter structures differ: {0}")]
    Incongruent(String),
    #[error("row {row}: label {label} outside [0, {classes})")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    #[error("batch has {rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

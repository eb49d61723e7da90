//! Fully connected networks, optimizers and training schedules.

mod mlp;
mod optim;
mod schedule;

pub use mlp::{init_mlp, Activation, Bound, Dropout, Layer, Mlp};
pub use optim::{Optimizer, OptimizerKind};
pub use schedule::{lambda_schedule, lr_schedule, ParamGroup, ScheduleParams};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input has {got} features, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("layer dims need at least an input and an output size, got {0:?}")]
    Dims(Vec<usize>),
    #[error("dropout rate {0} outside [0, 1)")]
    DropoutRate(f64),
    #[error("dropout replay has no mask for masked layer {0}")]
    DropoutReplay(usize),
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(usize),
    #[error("training progress {0} outside [0, 1]")]
    Progress(f64),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

//! Minimal dense feedforward network with manual backpropagation, masked
//! weights, SGD/Adam, evaluation and optional teacher-student distillation.

mod matrix;
mod network;
mod optim;
mod train;

use thiserror::Error;

pub use matrix::Matrix;
pub use network::{
    backward, forward, forward_distilled, Activation, DistillTargets, ForwardCache, Gradients,
    KdConfig, Layer, MaskedNetwork, Network,
};
pub use optim::{
    bitwise_network_eq, bitwise_optimizer_eq, optimizer_step, restore, snapshot, ModelSnapshot,
    OptimizerKind, OptimizerState,
};
pub use train::{argmax, evaluate, train_one_epoch, Evaluation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },
    #[error("forward cache is stale (cache version {cache}, network version {network})")]
    StaleCache { cache: u64, network: u64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
}

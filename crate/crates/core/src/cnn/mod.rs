//! A small LeNet-style network: stages of (convolution, sigmoid, mean pool)
//! followed by a fully connected sigmoid output layer, trained on the
//! squared-error loss with an adaptive learning rate.

mod layers;
mod model;
mod network;
mod spec;
mod train;

pub use layers::{conv_backward, conv_forward, pool_backward, pool_forward, ConvOutput, ConvParams, Maps};
pub use model::{load_model, read_model, save_model, write_model, ModelError, MODEL_MAGIC, MODEL_VERSION};
pub use network::{
    argmax, backward, forward, init_network, loss, predict, DenseParams, ForwardCache, Gradients,
    NetworkState, ParamSet, StageCache,
};
pub use spec::{ActivationSpec, ConvLayerSpec, NetworkSpec, PoolLayerSpec, ShapeTrace, Stage, StageShape};
pub use train::{
    batch_gradient, error_rate, next_learning_rate, train, BatchStep, EpochRecord, LrState, Sample, TrainConfig, TrainOutcome,
    MIN_LEARNING_RATE,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CnnError {
    #[error("invalid network plan at stage {stage}: {reason} (shape trace: {trace})")]
    InvalidPlan {
        stage: usize,
        reason: String,
        trace: String,
    },
    #[error("map side {side} is not divisible by pool size {n}")]
    IndivisibleSide { side: usize, n: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("class {0} has no training samples")]
    EmptyClass(usize),
    #[error("label {label} outside {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("parameters became non-finite during epoch {epoch}")]
    Diverged { epoch: usize },
}

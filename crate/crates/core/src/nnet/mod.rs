//! Minimal tensor engine with hand-derived backward passes, plus the two
//! model families used by the pipelines: the residual embedding classifier
//! and the stacked Bi-LSTM sequence regressor.
//!
//! The engine is generic over [`Scalar`] so training runs in f32 while the
//! gradient-check suite drives the identical code in f64.

mod checkpoint;
pub mod init;
mod layers;
mod loss;
mod lstm;
mod optim;
mod pooling;
mod resnet;
mod scalar;
mod tensor;

pub use checkpoint::{collect_state, restore_state, ModelCheckpoint, StateEntry};
pub use layers::{BatchNorm2d, Conv2d, Dropout, Linear, Relu, TanhLayer};
pub use loss::{cosine_distance_loss, cross_entropy_loss, softmax};
pub use lstm::{BiLstmConfig, BiLstmLayer, BiLstmRegressor, LstmDirection};
pub use optim::{plateau_lr, Optimizer, OptimizerConfig, OptimizerKind};
pub use pooling::{gap, gsp, GapGspPool};
pub use resnet::{AuxFusion, ResNetEmbed, ResNetEmbedConfig};
pub use scalar::Scalar;
pub use tensor::{matmul, Tensor};

/// Train mode uses batch statistics and dropout; eval mode is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

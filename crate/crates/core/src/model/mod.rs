//! The generalization tower network.
//!
//! Level 1 reads the observation. Every higher level reads the (rectified) output
//! of the first convolution of the level below it. Each level runs `layers`
//! stride-2 convolutions, flattens, and feeds one LSTM. The levels are merged as
//! `H = ReLU(sum_m a_m T_m + b)`, where `a_m` is level m's LSTM output, and `H`
//! feeds one softmax policy head per action-space size plus a scalar value head.

mod checkpoint;
mod config;
mod network;
mod noise;

pub use checkpoint::{
    decode, encode, load_checkpoint, save_checkpoint, sidecar_path, CheckpointError, Precision, FORMAT_VERSION, MAGIC,
};
pub use config::{GtnConfig, LevelGeometry};
pub use network::{audit_parameters, copy_parameters, parameter_layout, ForwardResult, GtnNetwork, TapeStep};
pub use noise::{GaussianNoise, NoiseSource, ZeroNoise};

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("structural audit failed: {0}")]
    Audit(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

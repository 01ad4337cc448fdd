//! Minimal differentiable layer set: dense tensors, convolution, LSTM, linear maps,
//! ReLU and softmax, a recording tape for reverse-mode gradients, RMSProp and a
//! finite-difference oracle.

mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_gradient, max_relative_error, relative_error, DEFAULT_STEP, RELATIVE_ERROR_FLOOR};
pub use layers::{
    conv2d_backward, conv2d_forward, conv_chain_side, linear_forward, log_softmax, lstm_step, matvec,
    matvec_backward, relu, same_padding, sigmoid, softmax, LstmParams, LstmState,
};
pub use optim::{rmsprop_update, RmsProp, RmsPropConfig};
pub use params::{ParamId, ParameterSet};
pub use tape::{LstmIds, NodeGrads, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
}

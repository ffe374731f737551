//! Minimal dense tensors with a reverse-mode tape, plus the handful of layers
//! a recurrent convolutional depth network needs: strided convolution,
//! convolutional LSTM cells, layer normalization, depth-to-space and the
//! usual elementwise activations.
//!
//! Everything is NHWC. Kernels are stored `kh × kw × cin × cout`.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod lstm;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use lstm::{conv_lstm_cell, ConvLstmState, LstmVars};
pub use params::ParamStore;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Element, Tensor};

/// Layer-norm epsilon used throughout the network.
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

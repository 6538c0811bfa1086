//! Dense encoder and decoder networks and their parameter storage.

mod codec;
mod dense;
mod params;

pub use codec::{Decoder, Encoder, VARIANCE_FLOOR};
pub use dense::{layer_norm, Activation, DenseNet, Layer, LayerShape, NetShape, LAYER_NORM_EPS};
pub use params::{NamedTensor, ParamId, ParamStore};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("input has {got} rows, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

//! The recurrent cell: latent beliefs, locally linear transitions, the
//! closed-form predict step and the factorized update step.

mod cell;
mod state;
mod transition;

pub use cell::{Checkpoint, Cru, CruConfig, OutputKind, Step, StepOutput, BoundCru, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use state::{
    gain_norm, gains, update, update_with_gain, LatentObservation, LatentState, INITIAL_VARIANCE, VARIANCE_CLAMP,
};
pub use transition::{
    band_indices, LayoutKind, TransitionLayout, TransitionModel, TransitionShape, INITIAL_DIFFUSION, INITIAL_EIGENVALUE,
};

use crate::linalg::LinalgError;
use crate::nn::NnError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Transition parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Banded basis matrices, matrix-exponential prior.
    Full,
    /// Shared orthogonal eigenbasis, elementwise prior.
    Fast,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::Fast => "fast",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Mode::Full),
            "fast" => Ok(Mode::Fast),
            _ => Err(format!("unknown mode '{s}' (expected full or fast)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum SsmError {
    #[error("negative time step {0}")]
    NegativeDuration(f64),
    #[error("observation variance must be positive, got {0}")]
    ObservationVariance(f64),
    #[error("timestamps must increase: step {index} at {time} follows {previous}")]
    NonIncreasingTime { index: usize, previous: f64, time: f64 },
    #[error("empty sequence")]
    EmptySequence,
    #[error("shape: {0}")]
    Shape(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[cfg(test)]
pub(crate) mod tests;

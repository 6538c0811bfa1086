//! Continuous recurrent units: recurrent networks whose latent state follows a
//! linear SDE and is filtered in closed form at irregular observation times.

pub mod autodiff;
pub mod linalg;
pub mod data;
pub mod nn;
pub mod ssm;
pub mod train;
pub mod cli;

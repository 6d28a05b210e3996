//! Latent-space communication between a masked diffusion planner and an
//! autoregressive executor, at desk scale.

pub mod archive;
pub mod bridge;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod executor;
pub mod experiment;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipelines;
pub mod planner;
pub mod projector;
pub mod prompts;
pub mod rng;
pub mod run;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};

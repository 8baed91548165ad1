//! Goal-conditioned diffusion trajectory forecasting with tree sampling.

pub mod cli;
pub mod condition;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod goal;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};

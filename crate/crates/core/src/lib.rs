//! Hierarchical empirical Bayes autoencoders (HEBAE) with VAE and WAE-MMD
//! baselines, built on a small dense reverse-mode autodiff core.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod image;
pub mod models;
pub mod objectives;
pub mod optim;
pub mod probability;
pub mod rng;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testing;

pub use error::{Error, ErrorClass, Result};
pub use models::{Autoencoder, ModelKind};
pub use rng::{Purpose, RngStream};
pub use tensor::Tensor;

//! FHRFormer: a masked transformer autoencoder for fetal heart rate
//! (FHR) time series, with self-supervised training, gap inpainting and
//! recursive forecasting.
//!
//! The crate is organized as:
//! - [`diffcore`]: reverse-mode differentiable tensor primitives
//! - [`signalio`]: recording ingestion and the preprocessing pipeline
//! - [`synthgen`]: synthetic FHR-like signal generation for testing
//! - [`model`]: the encoder/decoder network and checkpointing
//! - [`objective`]: the hybrid masked-MSE + focal-frequency loss
//! - [`trainer`]: Adam, plateau scheduling, early stopping
//! - [`metrics`]: the evaluation suite (observed-points-only, in bpm)
//! - [`tasks`]: inpainting and recursive forecasting

pub mod diffcore;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod signalio;
pub mod synthgen;
pub mod tasks;
pub mod trainer;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Network anomaly detection from raw flow bytes: flow assembly from packet
//! captures, a convolutional autoencoder regularized by a Wasserstein critic,
//! and reconstruction-error scoring.

pub mod detector;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod losses;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};

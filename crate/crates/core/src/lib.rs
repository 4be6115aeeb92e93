//! Spatial-temporal selective state-space forecasting for sensor networks.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`autodiff`], [`rng`], [`params`]: dense tensors, a
//!   reverse-mode tape, seeded random streams and parameter storage.
//! - [`data`]: dataset container, on-disk format, splits, windows,
//!   standardization and a synthetic traffic generator.
//! - [`embedding`]: feature, calendar and adaptive embeddings.
//! - [`mamba`]: discretization, causal convolution and the selective scan.
//! - [`model`]: the full forecaster and its checkpoint format.
//! - [`train`]: metrics, losses, Adam and the early-stopping loop.
//! - [`bench`]: scaling benchmarks and FLOP accounting.
//! - [`gradcheck`]: finite-difference verification of every gradient.
//! - [`cli`]: configuration schema and subcommand dispatch.

pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod mamba;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};

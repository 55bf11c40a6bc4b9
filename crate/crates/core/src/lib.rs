//! Timbre transfer between audio domains with a shared-encoder VAE-GAN over
//! mel-spectrograms.
//!
//! The pipeline runs [`audio`] preprocessing, [`dsp`] analysis, [`trainer`]
//! training of a [`model::ModelBundle`], sliding-window [`inference`] with
//! Griffin-Lim resynthesis, and [`metrics`] evaluation.

pub mod audio;
pub mod corpus;
pub mod dsp;
mod error;
pub mod inference;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod trainer;
pub use error::{Error, Result};

//! Identity-preserving face super-resolution.
//!
//! A sparse-aggregation convolutional generator upscales 28x28 face crops to
//! 112x112, a Wasserstein critic with gradient penalty supplies the
//! adversarial signal, and an angular-margin face recognizer both regularizes
//! the generator toward identity preservation and benefits from the restored
//! detail. Everything runs on the CPU in f64 with a tape-based reverse-mode
//! autodiff, so gradients are checkable against finite differences and runs
//! are bitwise reproducible.

pub mod autograd;
pub mod cli;
pub mod config;
pub mod critic;
pub mod data;
pub mod engine;
pub mod error;
pub mod generator;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod recognizer;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};

//! Desk-scale neural network laboratory.
//!
//! Dense multi-layer perceptrons with dropout, batch normalization and
//! gradient-accelerated activations (GAAF), together with the instruments
//! used to study them: per-layer gradient information, dropout-induced net
//! variance and net-value saturation histograms.

pub mod activations;
pub mod data;
pub mod error;
pub mod nn;
pub mod numcore;
pub mod probes;
pub mod train;

pub use error::{Error, Result};
pub use numcore::{Matrix, RngStream};

//! Spiking networks for class-incremental learning: spike encoders, a
//! learnable LIF layer trained by surrogate-gradient BPTT, class-balanced
//! replay and a closed-loop spike-budget controller.

pub mod budget;
pub mod continual;
pub mod encoding;
pub mod error;
pub mod network;
pub mod neuron;
pub mod replay;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

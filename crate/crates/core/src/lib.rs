//! Measure and explain what a small CNN forgets under transfer learning.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod layers;
pub mod loss;
pub mod lrp;
pub mod metrics;
pub mod network;
pub mod pgm;
pub mod pipeline;
pub mod probe;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{Architecture, FreezePlan, Network};
pub use tensor::{Scalar, Tensor};

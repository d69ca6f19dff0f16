//! Zero-shot Retinex video enhancement with temporal feedback.

pub mod autograd;
pub mod cli;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod media;
pub mod nn;
pub mod retinex;
pub mod synth;
pub mod temporal;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};

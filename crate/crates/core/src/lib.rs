//! Inception-nucleus convolutional networks for end-to-end sound
//! classification on raw waveforms, with a from-scratch training engine.

pub mod analysis;
pub mod audio;
pub mod error;
pub mod model;
pub mod nn;
pub mod optim;
pub mod real;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;

//! Perceptual super-resolution training with auto-encoded supervision.

pub mod autoencoder;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod networks;
pub mod recipe;
pub mod rng;
pub mod seve;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

pub mod adversarial;
pub mod baselines;
pub mod diffusion;
pub mod error;
pub mod guidance;
pub mod nn;
pub mod numerics;
pub mod potentials;
pub mod powerflow;
pub mod tracks;

pub use error::{Error, ErrorClass, Result};

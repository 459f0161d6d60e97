//! Characteristic-grid simulation of the 1+1-dimensional damped stochastic
//! Klein–Gordon equation driven by multiplicative space-time white noise,
//! with rectangular-increment, quadratic-variation and diffusion-parameter
//! diagnostics.

pub mod analysis;
pub mod coords;
pub mod error;
pub mod greens;
pub mod harness;
pub mod noise;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};

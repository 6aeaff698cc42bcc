//! Mean-field moment dynamics for a quadratically coupled optomechanical
//! system, with an exact density-matrix reference.

pub mod cli;
pub mod correlations;
pub mod error;
pub mod integrator;
pub mod io;
pub mod lindblad;
pub mod moments;
pub mod params;
pub mod scenarios;

pub use error::{Error, Result};

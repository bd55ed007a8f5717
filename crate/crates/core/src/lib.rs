//! Simulation, stationary law, ergodicity certificates and drift estimation
//! for AD(1,n) affine diffusions.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod matrix;
pub mod model;
pub mod riccati;
pub mod simulator;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

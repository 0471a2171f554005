//! Exact and Monte Carlo computations for transient renewal chains whose
//! return times have regularly varying (pure power-law) tails.

pub mod distributions;
pub mod error;
pub mod experiments;
pub mod laws;
pub mod mc;
pub mod numeric;
pub mod occupation;
pub mod renewal;
pub mod report;
pub mod series;

pub use error::{Error, Result};

//! Valid prediction intervals for group-level effects in two-stage Gaussian
//! linear mixed models.

pub mod baselines;
pub mod dist;
pub mod error;
pub mod generalized;
pub mod intervals;
pub mod joint;
pub mod model;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};

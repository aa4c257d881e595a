//! Numerical tools for a mean-field metapopulation model: a single-patch
//! birth-death-catastrophe chain driven by immigration from a mean-field
//! pool, its persistence threshold, the infinite ODE system for patch-size
//! frequencies, and finite-patch stochastic simulation.

pub mod chain;
pub mod error;
mod linalg;
pub mod meanfield;
pub mod model;
pub mod stochastic;
pub mod threshold;

pub use chain::m1_distance;
pub use error::{Error, Result};
pub use model::{ModelSpec, RateFamily, RateModel};

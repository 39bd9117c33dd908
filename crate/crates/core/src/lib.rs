//! Simulation and validation lab for additive functionals of stationary
//! Gauss-Markov triangular arrays and their limit processes.

pub mod distance;
pub mod error;
pub mod experiment;
pub mod functionals;
pub mod gauss_markov;
pub mod hermite;
pub mod limits;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
pub use gauss_markov::{ProcessParams, Regime};
pub use hermite::{Basis, PolySpec};

//! Projected gradient descent for signal recovery from nonlinear
//! measurements under a generative prior.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod genmodel;
pub mod linalg;
pub mod measurement;
pub mod projection;
pub mod seed;
pub mod sensing;
pub mod solvers;

pub use error::{Error, Result};

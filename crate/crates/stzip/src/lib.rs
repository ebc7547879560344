//! Bayesian inference for spatio-temporal zero-inflated Poisson models on
//! point-referenced count data.
//!
//! The model couples a log-linear Poisson intensity with a probit layer for
//! structural zeros. Both layers carry low-rank Gaussian-process spatial
//! effects and random-walk time effects; posterior computation is a Gibbs
//! sampler built on a negative-binomial surrogate for the Poisson kernel so
//! every block update is a conjugate draw.

pub mod data;
pub mod error;
pub mod io;
pub mod kernel;
pub mod math;
pub mod pg;
pub mod predict;
pub mod sampler;
pub mod simulate;
pub mod spline;

pub use error::{Result, StzipError};

//! Continuous-time random walk pinned to a sparse heavy-tailed random walk.

pub mod analysis;
pub mod environment;
pub mod error;
pub mod homogeneous;
pub mod kernel;
pub mod numeric;
pub mod partition;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod volterra;

pub use error::{Error, Result};

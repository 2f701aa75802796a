//! Derandomized knockoff variable selection for right-censored survival data
//! with k-familywise-error-rate control.
//!
//! The pipeline: generate sequential knockoff copies of a mixed
//! continuous/categorical covariate table, fit a penalized Cox regression
//! over the augmented design, score each feature by the penalty level at
//! which it enters the path, and threshold the resulting sign statistics so
//! that the probability of k or more false selections stays below a target
//! level. Aggregating over many knockoff realizations derandomizes the
//! selection.

pub mod data;
pub mod derandomize;
pub mod error;
pub mod filter;
pub mod knockoff;
pub mod pbc;
pub mod seed;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};

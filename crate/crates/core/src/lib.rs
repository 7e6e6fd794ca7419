//! Plug-and-play single-loop stochastic bilevel optimization.
//!
//! The solver updates three variables at once: the upper-level variable
//! `x`, the lower-level variable `y` and the implicit variable `z` that
//! tracks `[hess_yy g]^{-1} grad_y f`. Each update reads a stochastic
//! estimate of its direction from a pluggable estimator (SGD, SAGA, PAGE,
//! ZeroSARAH or STORM).

pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod problems;
pub mod rng;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Numerical homogenization of non-local, stable-like Dirichlet forms in
//! stationary ergodic random media.

pub mod cli;
pub mod discrete;
pub mod env;
pub mod error;
pub mod hash;
pub mod homogenize;
pub mod kernel;
pub mod par;
pub mod quad;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};

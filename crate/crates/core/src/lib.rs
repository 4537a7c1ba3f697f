//! Reference-measure fixed-point solver for conditional McKean-Vlasov SDEs.
//!
//! Particles are simulated under the reference measure against a fixed
//! observation path, reweighted by their Girsanov kernels, and the weighted
//! particle clouds give the conditional-law path. Iterating that solution map
//! (with stopping-time localization) yields the fixed point.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coefficients;
pub mod conditional_law;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fixed_point;
pub mod grid;
pub mod io;
pub mod measures;
pub mod oracles;
pub mod reference_sim;

pub use error::{Error, Result};

//! Model-X knockoffs for controlled variable selection.
//!
//! The crate covers the full pipeline: a known covariate model, the
//! decorrelation vector `s`, knockoff sampling (Gaussian, second-order and
//! sequential conditional independent pairs for Markov chains), lasso-based
//! and Bayesian feature statistics with the flip-sign property, the knockoff
//! and knockoff+ thresholds, and the conditional randomization test.
//!
//! Everything here is `no_std` + `alloc`; file formats, the command-line
//! front end and the simulation harness live in the `knockoffs` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod covariate_model;
pub mod crt;
pub mod error;
pub mod filter;
pub mod knockoff_gen;
pub mod numerics;
pub mod rng;
pub mod s_solver;
pub mod sparse_glm;
pub mod statistics;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};

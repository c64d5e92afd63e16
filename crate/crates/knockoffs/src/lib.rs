//! File formats, simulation harness and command-line front end for
//! model-X knockoffs. The numerical work lives in `knockoffs_core`.

pub mod cli;
pub mod error;
pub mod io;
pub mod manifest;
pub mod model_config;
pub mod parallel;
pub mod simharness;

pub use error::{Error, Result};
pub use knockoffs_core as core;

//! Experiment orchestration around `ride-core`: run configuration with
//! strict unknown-key rejection, dataset materialization, the versioned
//! checkpoint container, report emission, and the command implementations
//! behind the `ride-lab` binary.
//!
//! Commands exit 0 on success, 1 on configuration errors, 2 on data errors,
//! and 3 on numeric failures.

pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod errors;
pub mod reports;
pub mod runner;

pub use errors::{LabError, Result};

//! Error type for the lab binary, carrying the process exit code.

use std::io;
use std::path::Path;

use ride_core::CoreError;

/// Failures surfaced by commands. Each variant owes its existence to a
/// distinct exit code: 1 for configuration mistakes, 2 for bad input data or
/// artifacts, 3 for numeric breakdown during a run.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 1,
            LabError::Data(_) => 2,
            LabError::Numeric(_) => 3,
        }
    }
}

impl From<CoreError> for LabError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::Shape(_) => LabError::Config(e.to_string()),
            CoreError::Data(_) | CoreError::Format(_) => LabError::Data(e.to_string()),
            CoreError::Numeric(_) => LabError::Numeric(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

/// A referenced input that cannot be opened is a configuration mistake
/// ("all referenced files exist at validation time"); use for opening inputs.
pub fn open_err(path: &Path, e: io::Error) -> LabError {
    LabError::Config(format!("cannot open {}: {e}", path.display()))
}

/// Failing to read or write bytes once a path was accepted is a data error.
pub fn io_err(path: &Path, e: io::Error) -> LabError {
    LabError::Data(format!("io failure on {}: {e}", path.display()))
}

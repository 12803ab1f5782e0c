//! Error type shared across the crate.

use alloc::string::String;

/// Failure modes surfaced by the core library.
///
/// The variants are deliberately coarse: they distinguish caller mistakes
/// (configuration, shapes), bad input data, malformed serialized bytes, and
/// genuine numeric breakdown, because downstream tooling maps these onto
/// distinct process exit codes.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoreError {
    /// Structurally invalid arguments or settings (bad dimension, zero width,
    /// empty expert list, infeasible profile).
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Array dimensions that do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Input data violating a documented precondition (label out of range,
    /// class with too few instances).
    #[error("invalid data: {0}")]
    Data(String),
    /// A malformed byte stream or serialized artifact.
    #[error("malformed input: {0}")]
    Format(String),
    /// A computation produced non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = core::result::Result<T, CoreError>;

//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An operation produced or was given a value outside its domain.
    #[error("domain violation in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A NaN or infinity appeared where only finite values are allowed.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Two parameter sets do not align by name/shape.
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),

    /// A labeled-only code path received an unlabeled sample (or vice versa).
    #[error("sample role violation: {0}")]
    RoleViolation(String),

    /// Invalid configuration value.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Config file syntax or validation error with position information.
    #[error("config parse error at line {line}: {detail}")]
    ConfigParse { line: usize, detail: String },

    /// Checkpoint container is malformed, truncated or corrupted.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Pseudo-label sets used inconsistently with the CTF schedule.
    #[error("ctf schedule violation: {0}")]
    Schedule(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

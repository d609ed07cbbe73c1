//! Error type shared by the simulation modules.
//!
//! Shape violations that can only arise from caller bugs (e.g. mismatched
//! gradient/parameter blocks inside a single operation) panic via `assert!`;
//! everything reachable from user configuration surfaces as [`Error`].

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors produced by simulation operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration value or combination of values is invalid.
    Config(String),
    /// An input had a different dimension than the operation expects.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// An operation that needs at least one element received none.
    Empty(&'static str),
    /// An aggregation or attack rule needs more updates than it received.
    InsufficientUpdates { required: usize, available: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, found {found}"),
            Error::Empty(what) => write!(f, "{what} must not be empty"),
            Error::InsufficientUpdates {
                required,
                available,
            } => write!(f, "need at least {required} updates, got {available}"),
        }
    }
}

impl core::error::Error for Error {}

impl Error {
    /// Convenience constructor for configuration errors.
    pub fn config(msg: impl fmt::Display) -> Self {
        use alloc::string::ToString;
        Error::Config(msg.to_string())
    }
}

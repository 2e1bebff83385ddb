//! Error type shared by every module in the core crate.

use alloc::string::String;
use core::fmt;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, CoreError>;

/// Failure modes of the core engine.
///
/// `Dimension` is for shape mismatches, `Domain` for violated preconditions,
/// `Numeric` for NaN/Inf encountered mid-computation, `State` for calls made
/// out of order (e.g. backward against a stale forward cache) and `Config`
/// for inconsistent architecture configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },
    Domain(String),
    Numeric(String),
    State(String),
    Config(String),
}

impl CoreError {
    pub fn dimension(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        CoreError::Dimension {
            what: what.into(),
            expected,
            actual,
        }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        CoreError::Domain(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CoreError::Numeric(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        CoreError::State(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Dimension {
                what,
                expected,
                actual,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, got {actual}"),
            CoreError::Domain(msg) => write!(f, "domain error: {msg}"),
            CoreError::Numeric(msg) => write!(f, "numeric error: {msg}"),
            CoreError::State(msg) => write!(f, "state error: {msg}"),
            CoreError::Config(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl core::error::Error for CoreError {}

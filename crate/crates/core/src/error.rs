use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    /// The payload section ended before every declared tensor was read.
    #[error(
        "truncated payload: expected {expected} bytes, found {actual} ({missing} bytes missing)"
    )]
    Length {
        expected: u64,
        actual: u64,
        missing: u64,
    },

    #[error("invalid {subject}: {reason}")]
    Validation { subject: String, reason: String },

    #[error(
        "infeasible budget: requested global ratio {requested} exceeds the maximum achievable {max_achievable}"
    )]
    Infeasible { requested: f64, max_achievable: f64 },

    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),
}

impl Error {
    pub(crate) fn validation(subject: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Validation {
            subject: subject.into(),
            reason: reason.into(),
        }
    }
}

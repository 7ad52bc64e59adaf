//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or argument mismatch (dimension errors, empty data, bad ranges).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input that is formally valid but numerically meaningless, e.g. a
    /// zero-norm descriptor fed to the cosine kernel.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The outer objective or gradient became non-finite or exceeded the
    /// divergence guard during meta-training.
    #[error("numerical divergence at iteration {iteration}: {message}")]
    Divergence { iteration: usize, message: String },

    /// Config or checkpoint text that could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A parsed value violating a field's domain (e.g. a non-positive
    /// learning rate).
    #[error("invalid value for `{field}`: {message}")]
    Domain { field: String, message: String },

    /// Checkpoint format/version problems.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }

    pub fn domain(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Domain {
            field: field.into(),
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

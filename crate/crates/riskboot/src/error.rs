//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A malformed input row; `line` is the 1-based line in the source file.
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("invalid data: {0}")]
    Invalid(String),

    /// The requested interval or time point does not admit the statistic
    /// (e.g. no events, or the log-log transform is undefined there).
    #[error("inadmissible interval: {0}")]
    Inadmissible(String),

    #[error("infeasible calibration target: {0}")]
    Infeasible(String),
}

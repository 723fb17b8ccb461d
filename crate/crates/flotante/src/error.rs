//! Crate-wide error type.
//!
//! Variants are grouped by how the CLI maps them to exit codes: configuration
//! problems (bad run files, missing paths, invalid thresholds) versus data
//! problems (malformed inputs, broken invariants discovered mid-run).

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad parameter values, missing required paths,
    /// unusable run files. Detected before any heavy processing.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a documented contract in a way that cannot be
    /// quarantined (e.g. an orphan geography unit, a zero denominator).
    #[error("data error: {0}")]
    Data(String),

    /// A stream or file could not be read or written.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The first line of an input file does not match the documented format.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A regression could not be computed (degenerate variance, too few points).
    #[error("fit error: {0}")]
    Fit(String),

    /// A remote routing response could not be interpreted.
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

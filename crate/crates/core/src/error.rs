use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the toolkit. Every message names the module that failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{module}: dimension mismatch: {detail}")]
    Dimension { module: &'static str, detail: String },

    #[error("{module}: domain error: {detail}")]
    Domain { module: &'static str, detail: String },

    #[error("ndmath: non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("{module}: usage error: {detail}")]
    Usage { module: &'static str, detail: String },

    #[error("{module}: invalid input: {detail}")]
    Input { module: &'static str, detail: String },

    #[error("dataset: insufficient data: {0}")]
    Capacity(String),

    #[error("{module}: parse error in {source_name} at line {line}: {detail}")]
    Parse {
        module: &'static str,
        source_name: String,
        line: usize,
        detail: String,
    },

    #[error("{module}: malformed {what}: {detail}")]
    Format {
        module: &'static str,
        what: &'static str,
        detail: String,
    },

    #[error("{module}: integrity error: {detail}")]
    Integrity { module: &'static str, detail: String },

    #[error("{module}: config error: {detail}")]
    Config { module: &'static str, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            module,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            module,
            detail: detail.into(),
        }
    }

    pub(crate) fn usage(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Usage {
            module,
            detail: detail.into(),
        }
    }

    pub(crate) fn input(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Input {
            module,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Config {
            module,
            detail: detail.into(),
        }
    }

    pub(crate) fn integrity(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Integrity {
            module,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

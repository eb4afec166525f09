use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] kws_core::Error),

    #[error("cli: {context}: {detail}")]
    Input { context: String, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(detail: impl Into<String>) -> Self {
        CliError::Config(detail.into())
    }

    pub fn input(context: impl Into<String>, detail: impl Into<String>) -> Self {
        CliError::Input {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

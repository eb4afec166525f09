//! Command implementations behind the `kws` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::run_command;
pub use config::{Command, RunConfig};
pub use error::{CliError, Result};

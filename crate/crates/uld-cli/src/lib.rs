//! IO, file formats, configuration, and the benchmarking harness for the
//! distillation toolkit. The `uld` binary in this crate exposes the whole
//! pipeline as subcommands; everything algorithmic lives in `uld-core`.

use std::fmt;
use std::process::ExitCode;

pub mod bench;
pub mod config;
pub mod formats;

/// CLI failures, split by exit code: configuration problems exit 1,
/// runtime failures exit 2.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config file, missing or unreadable inputs.
    Config(String),
    /// The pipeline itself failed (support mismatch, solver error, IO on
    /// outputs).
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<uld_core::Error> for CliError {
    fn from(e: uld_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

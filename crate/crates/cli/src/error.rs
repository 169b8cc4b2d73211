use std::path::Path;

use actoreg_core::{ComputeError, Error};
use thiserror::Error;

/// Process exit codes. Scripts rely on these staying fixed.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    /// `path` is the dotted location of the offending field.
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io_at(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Io(_) => EXIT_IO,
        }
    }

    /// Same kind, message prefixed with `context`.
    pub fn context(self, context: &str) -> Self {
        match self {
            CliError::Config { path, message } => CliError::Config {
                path,
                message: format!("{context}: {message}"),
            },
            CliError::Numeric(m) => CliError::Numeric(format!("{context}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{context}: {m}")),
        }
    }
}

/// Core config messages read `field.path: what went wrong`.
fn split_config_message(msg: &str) -> CliError {
    match msg.split_once(": ") {
        Some((path, rest)) if !path.contains(' ') => CliError::config(path, rest),
        _ => CliError::config("<config>", msg),
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) | Error::Invalid(m) => split_config_message(&m),
            Error::Numeric { .. } | Error::Compute(ComputeError::NonFinite { .. }) => CliError::Numeric(e.to_string()),
            Error::Compute(_) => CliError::Numeric(e.to_string()),
            Error::Io(_) | Error::Format(_) | Error::Json(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

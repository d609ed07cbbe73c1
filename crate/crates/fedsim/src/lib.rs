//! Experiment harness around `fedsim-core`: config files, threaded client
//! execution, CSV/JSON reports, post-hoc analyses, and oracle suites.

use std::fmt;

pub mod analyze;
pub mod commands;
pub mod config;
pub mod oracle;
pub mod report;
pub mod runner;

/// A command failure, classified by exit code: configuration problems
/// exit 2, I/O problems exit 3, oracle failures exit 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    OracleFailed { failures: usize },
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config(message.into())
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError::Io(message.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::OracleFailed { .. } => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::OracleFailed { failures } => {
                write!(f, "oracle: {failures} propert{} failed", if *failures == 1 { "y" } else { "ies" })
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

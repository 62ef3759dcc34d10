//! Experiment driver behind the `iama` command-line tool: instance generation,
//! schedule and certified runs, reference caching and bound verification.

pub mod commands;
pub mod config;
pub mod reference;
pub mod trace;

use thiserror::Error;

/// Failure of a command, mapped to the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<iama::Error> for CliError {
    fn from(e: iama::Error) -> Self {
        use iama::Error::*;
        match e {
            InfeasibleLocal { .. }
            | NotPositiveDefinite(_)
            | NotStronglyConvex(_)
            | ToleranceNotReached { .. }
            | IterationCap(_)
            | InfeasibleWarmStart(_)
            | RankDeficient
            | NonNeighbourAccess { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

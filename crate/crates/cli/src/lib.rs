//! Driver behind the `g2flow` binary: identity validation, configured flow
//! runs with checkpoints, resumption and single-state diagnostics.

pub mod commands;
pub mod config;

use g2flow::flows::Termination;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 2;
    pub const POSITIVITY: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
    pub const CONFIG: i32 = 5;
    pub const IO: i32 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("snapshot format error: {0}")]
    Format(String),
    #[error("positivity lost: {0}")]
    Positivity(String),
    #[error("{0}")]
    Numerics(g2flow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Numerics(_) => exit::CONFIG,
            CliError::Io(_) | CliError::Format(_) => exit::IO,
            CliError::Positivity(_) => exit::POSITIVITY,
        }
    }
}

impl From<g2flow::Error> for CliError {
    fn from(e: g2flow::Error) -> Self {
        match e {
            g2flow::Error::Io(m) => CliError::Io(m),
            g2flow::Error::Format(m) => CliError::Format(m),
            g2flow::Error::NotPositive(m) => CliError::Positivity(m),
            other => CliError::Numerics(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub fn termination_exit_code(t: Termination) -> i32 {
    match t {
        Termination::ReachedT => exit::OK,
        Termination::PositivityLost => exit::POSITIVITY,
        Termination::CflCollapse | Termination::Diverged => exit::DIVERGENCE,
    }
}

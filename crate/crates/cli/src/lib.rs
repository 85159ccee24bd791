//! Campaign orchestration for closed-loop tuning: configuration, persistent
//! iteration logs, trajectory export and replay.

pub mod commands;
pub mod config;
pub mod fsutil;
pub mod records;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use commands::{evaluate, replay, simulate, tune, EvaluateArgs, ReplayOutcome, SimulateArgs, TuneSummary};
pub use config::CampaignConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("replay mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 I/O, 4 replay mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Mismatch(_) => 4,
        }
    }
}

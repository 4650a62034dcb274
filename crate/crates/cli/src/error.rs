use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use pointcount_core::checkpoint::CheckpointError;
use pointcount_core::config::ConfigError;
use pointcount_core::report::CsvError;
use pointcount_core::training::{TooFewSeeds, TrainError};

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, bad config, missing or unreadable inputs (exit 1).
    Usage(String),
    /// Training diverged or too few seeds survived (exit 2).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(1),
            CliError::Numerical(_) => ExitCode::from(2),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }

    pub fn csv(path: &Path, e: CsvError) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(format!("config: {e}"))
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TooFewSeeds> for CliError {
    fn from(e: TooFewSeeds) -> Self {
        CliError::Numerical(e.to_string())
    }
}

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("integration failed: {0}")]
    Diverged(String),

    #[error("no solution: {0}")]
    NoSolution(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::NoSolution(_) => 5,
        }
    }
}

impl From<fbpt_core::Error> for CliError {
    fn from(e: fbpt_core::Error) -> Self {
        use fbpt_core::Error::*;
        match e {
            InvalidParameter { .. } => CliError::Config(e.to_string()),
            IntegrationDiverged { .. } | ConservationViolated { .. } => CliError::Diverged(e.to_string()),
            BelowCritical { .. } => CliError::NoSolution(e.to_string()),
        }
    }
}

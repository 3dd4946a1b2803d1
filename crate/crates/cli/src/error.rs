use smc_bandits::BanditError;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config syntax error: {0}")]
    Syntax(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Run(#[from] BanditError),
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Syntax(_) | Self::Config { .. } | Self::Io { .. } => 1,
            Self::Output { .. } | Self::Run(_) => 2,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config not found: {}", .0.display())]
    ConfigNotFound(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("output error: {0}")]
    Output(String),

    #[error(transparent)]
    Core(#[from] isd_core::Error),
}

impl CliError {
    /// Process exit code: 3 config, 4 data or format, 5 checkpoint, 1 other.
    pub fn exit_code(&self) -> u8 {
        use isd_core::Error as E;
        match self {
            CliError::ConfigNotFound(_) | CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Output(_) => 1,
            CliError::Core(e) => match e {
                E::Config(_) | E::Temperature(_) => 3,
                E::Format { .. } | E::Length { .. } | E::UnknownClass(_) | E::SingletonClass(_) => 4,
                E::Checkpoint(_) => 5,
                _ => 1,
            },
        }
    }
}

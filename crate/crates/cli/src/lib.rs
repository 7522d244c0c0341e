//! Command implementations behind the `risense` binary.

pub mod commands;
pub mod config;

use risense::channel::ChannelError;
use risense::dataset::DatasetError;
use risense::detector::DetectorError;
use risense::spectrogram::SpectrogramError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("generation: {0}")]
    Generation(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Generation(_) => 4,
            CliError::Io(_) => 5,
            CliError::Schema(_) => 6,
            CliError::Other(_) => 1,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidConfig(msg) => CliError::Config(msg),
            DatasetError::Io(e) | DatasetError::Spectrogram(SpectrogramError::Io(e)) => CliError::Io(e),
            DatasetError::Json(e) => CliError::Schema(e.to_string()),
            DatasetError::Label { .. } => CliError::Schema(e.to_string()),
            other => CliError::Generation(other.to_string()),
        }
    }
}

impl From<DetectorError> for CliError {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::Io(e) => CliError::Io(e),
            DetectorError::InvalidParams(msg) => CliError::Config(msg),
            DetectorError::Format(e) => CliError::Schema(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<ChannelError> for CliError {
    fn from(e: ChannelError) -> Self {
        CliError::Config(e.to_string())
    }
}

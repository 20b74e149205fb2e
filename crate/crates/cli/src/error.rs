use thiserror::Error;
use zsim_train::TrainError;

/// Failures grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configuration or missing inputs: exit 2.
    #[error("configuration error: {0}")]
    Config(String),
    /// Anything that went wrong while running: exit 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl From<zsim_core::Error> for CliError {
    fn from(e: zsim_core::Error) -> Self {
        match e {
            zsim_core::Error::Config(m) => Self::Config(m),
            e => Self::Runtime(e.to_string()),
        }
    }
}

impl From<zsim_nn::NnError> for CliError {
    fn from(e: zsim_nn::NnError) -> Self {
        match e {
            zsim_nn::NnError::Config(m) => Self::Config(m),
            e => Self::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => Self::Config(m),
            TrainError::Sim(e) => e.into(),
            TrainError::Model(e) => e.into(),
            e => Self::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("worker transport: {0}")]
    Transport(String),
    #[error("worker timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error(transparent)]
    Sim(#[from] zsim_core::Error),
    #[error(transparent)]
    Model(#[from] zsim_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed scenario file: {0}")]
    Format(String),

    #[error("scenario {index} violates invariant: {what}")]
    Invariant { index: usize, what: String },

    #[error("scenario index {index} out of range (dataset has {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("scenario {index} has {steps} steps, longer than horizon {horizon}")]
    TooLong {
        index: usize,
        steps: usize,
        horizon: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("metric domain error: {0}")]
    Domain(String),

    #[error("policy failure: {0}")]
    Policy(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

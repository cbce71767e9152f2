use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("matrix not positive definite after jitter: pivot {index} = {value:e}")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("key {key} out of range for {num_keys} keys")]
    KeyOutOfRange { key: usize, num_keys: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bank mismatch: {0}")]
    BankMismatch(String),

    #[error("sampled class set is missing batch label {0}")]
    MissingPositive(usize),

    #[error("infeasible data spec: {0}")]
    InfeasibleSpec(String),

    #[error("stale forward cache: encoder parameters changed since the matching forward pass")]
    StaleCache,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

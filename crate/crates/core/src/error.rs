use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("particle index {index} out of range for {n} particles")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("self-interaction requested on particle {0}")]
    SelfInteraction(usize),

    #[error("non-finite phase {0}")]
    NonFinitePhase(f64),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("subsystem of {size} particles exceeds cap of {cap}")]
    SubsystemTooLarge { size: usize, cap: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("observable `{observable}` is not compatible with model `{model}`")]
    IncompatibleObservable { observable: String, model: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

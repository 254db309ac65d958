use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unroll of {k} steps from step {step_index} overflows horizon {horizon}")]
    HorizonOverflow {
        step_index: usize,
        k: usize,
        horizon: usize,
    },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("non-finite loss for particle {particle} at step {step}")]
    NonFiniteParticleLoss { particle: usize, step: usize },

    #[error("{operation} requires step Jacobians, which this system does not provide")]
    MissingJacobians { operation: &'static str },

    #[error("non-finite gradient coordinate {index}")]
    NonFiniteGradient { index: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("IDX parse error: {0}")]
    Idx(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

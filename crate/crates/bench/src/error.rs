use thiserror::Error;

/// CLI-level failure, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Numerical(_) => 3,
            BenchError::Io(_) => 1,
        }
    }

    /// Errors raised while setting an experiment up are configuration errors
    /// unless they are I/O.
    pub fn setup(err: pes_core::Error) -> Self {
        match err {
            pes_core::Error::Io(msg) => BenchError::Io(msg),
            other => BenchError::Config(other.to_string()),
        }
    }

    /// Errors raised while an experiment runs.
    pub fn runtime(err: pes_core::Error) -> Self {
        use pes_core::Error as E;
        match err {
            E::NonFiniteLoss { .. } | E::NonFiniteParticleLoss { .. } | E::NonFiniteGradient { .. } => {
                BenchError::Numerical(err.to_string())
            }
            E::Io(msg) => BenchError::Io(msg),
            other => BenchError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        BenchError::Io(e.to_string())
    }
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

use thiserror::Error;

/// Errors produced by the reconstruction pipeline.
///
/// `Validation` covers precondition failures on user-supplied data and
/// configuration; everything else is a numeric or I/O failure encountered
/// while computing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("sde integration produced a non-finite state at step {step}")]
    Blowup { step: usize },

    #[error("new sample is out of the support of the training data: {0}")]
    OutOfSupport(String),

    #[error("degenerate evolution: {0}")]
    DegenerateEvolution(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code for the CLI: 2 for bad inputs, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Io(_) | Error::Serde(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised by the risk pipeline, interpretability engine and router.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("AUC is undefined unless both classes are present")]
    UndefinedAuc,

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("retrieval error: {0}")]
    Retrieval(String),

    #[error("backend transport error: {message}")]
    Transport { message: String, retryable: bool },

    #[error("session state error: {0}")]
    SessionState(String),

    #[error("missing cell: {0}")]
    MissingCell(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn transport(message: impl Into<String>) -> Self {
        Error::Transport {
            message: message.into(),
            retryable: true,
        }
    }
}

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config error: {0}")]
    Config(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("worker failed: {0}")]
    Worker(String),

    #[error(transparent)]
    Core(#[from] gib_core::Error),
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

/// Wire form of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: Value,
}

impl ServiceError {
    pub fn status_and_code(&self) -> (StatusCode, &'static str) {
        use gib_core::Error as E;
        match self {
            ServiceError::Config(_) => (StatusCode::INTERNAL_SERVER_ERROR, "config"),
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ServiceError::Worker(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            ServiceError::Core(e) => match e {
                E::Validation(_) => (StatusCode::BAD_REQUEST, "validation"),
                E::Schema(_) => (StatusCode::UNPROCESSABLE_ENTITY, "schema"),
                E::Numeric(_) => (StatusCode::UNPROCESSABLE_ENTITY, "numeric"),
                E::Degenerate(_) => (StatusCode::UNPROCESSABLE_ENTITY, "degenerate"),
                E::InsufficientData(_) => (StatusCode::UNPROCESSABLE_ENTITY, "insufficient_data"),
                E::UndefinedAuc => (StatusCode::UNPROCESSABLE_ENTITY, "undefined_auc"),
                E::Calibration(_) => (StatusCode::UNPROCESSABLE_ENTITY, "calibration"),
                E::Ingestion(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ingestion"),
                E::Retrieval(_) => (StatusCode::INTERNAL_SERVER_ERROR, "retrieval"),
                E::Transport { .. } => (StatusCode::BAD_GATEWAY, "transport"),
                E::SessionState(_) => (StatusCode::CONFLICT, "session_state"),
                E::MissingCell(_) => (StatusCode::UNPROCESSABLE_ENTITY, "missing_cell"),
                E::Unsupported(_) => (StatusCode::BAD_REQUEST, "unsupported"),
                E::Internal(_) | E::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
                E::Json(_) => (StatusCode::BAD_REQUEST, "json"),
            },
        }
    }

    pub fn to_api(&self) -> ApiError {
        let (_, code) = self.status_and_code();
        let detail = match self {
            ServiceError::Core(gib_core::Error::Transport { retryable, .. }) => json!({ "retryable": retryable }),
            _ => Value::Null,
        };
        ApiError {
            code: code.to_string(),
            message: self.to_string(),
            detail,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, _) = self.status_and_code();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(self.to_api())).into_response()
    }
}

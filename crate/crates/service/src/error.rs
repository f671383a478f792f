use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mlscope_core::audio::AudioError;
use mlscope_core::isochrome::IsochromeError;
use mlscope_core::qlearn::QLearnError;
use serde::{Deserialize, Serialize};

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session '{id}'"))
    }

    pub fn job_not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "JobNotFound", format!("no job '{id}'"))
    }

    pub fn invalid_transition(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "InvalidTransition", message)
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "MalformedRequest", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<QLearnError> for ApiError {
    fn from(e: QLearnError) -> Self {
        let status = match e {
            QLearnError::SessionNotRunning => StatusCode::CONFLICT,
            QLearnError::UnknownLevel(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<IsochromeError> for ApiError {
    fn from(e: IsochromeError) -> Self {
        let status = match e {
            IsochromeError::Encode(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<AudioError> for ApiError {
    fn from(e: AudioError) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string())
    }
}

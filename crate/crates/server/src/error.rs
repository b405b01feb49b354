//! JSON error bodies: `{"error": "<Code>", "message": "..."}`.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            error,
            message: message.into(),
        }
    }

    pub fn unauthenticated(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "Unauthenticated", message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationFailed", message)
    }

    pub fn precondition_required() -> Self {
        Self::new(
            StatusCode::PRECONDITION_REQUIRED,
            "PreconditionRequired",
            "this route requires an If-Version header",
        )
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "NotFound" | "UnknownUnit" => StatusCode::NOT_FOUND,
        "Forbidden" => StatusCode::FORBIDDEN,
        "VersionConflict" | "GateNotPassed" | "WrongPhase" | "MissingDecisions" | "NothingToUndo" => {
            StatusCode::CONFLICT
        }
        "ValidationFailed" => StatusCode::UNPROCESSABLE_ENTITY,
        "UnparseableResponse" => StatusCode::BAD_GATEWAY,
        "ProviderUnavailable" | "StorageUnavailable" => StatusCode::SERVICE_UNAVAILABLE,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<cqa_core::Error> for ApiError {
    fn from(e: cqa_core::Error) -> Self {
        let code = e.code();
        Self::new(status_for(code), code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

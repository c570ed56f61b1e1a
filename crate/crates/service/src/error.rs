use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use aims_core::AimsError;

/// Error response: `{"error": message}` with a status code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn no_checkpoint() -> Self {
        Self::new(StatusCode::CONFLICT, "no checkpoint loaded")
    }
}

impl From<AimsError> for ApiError {
    fn from(e: AimsError) -> Self {
        let status = match &e {
            AimsError::Rle { .. }
            | AimsError::Shape(_)
            | AimsError::EmptyPrompt
            | AimsError::Image(_)
            | AimsError::Config(_) => StatusCode::BAD_REQUEST,
            AimsError::InvalidSelection(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

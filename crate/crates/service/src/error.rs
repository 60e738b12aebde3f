use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no lens assets loaded")]
    NoAssets,

    #[error("{field}: {message}")]
    BadUpload { field: String, message: String },

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("unknown lens {0:?}")]
    UnknownLens(String),

    #[error("{0}")]
    Invalid(String),

    #[error("asset error: {0}")]
    Assets(String),

    #[error("render failed: {0}")]
    Render(String),
}

impl ServiceError {
    pub fn upload(field: &str, message: impl ToString) -> Self {
        ServiceError::BadUpload {
            field: field.to_string(),
            message: message.to_string(),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NoAssets => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::BadUpload { .. } => StatusCode::BAD_REQUEST,
            ServiceError::UnknownSession(_) | ServiceError::UnknownLens(_) => StatusCode::NOT_FOUND,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Assets(_) | ServiceError::Render(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let field = match &self {
            ServiceError::BadUpload { field, .. } => Some(field.clone()),
            _ => None,
        };
        let body = json!({ "error": self.to_string(), "field": field });
        (self.status(), Json(body)).into_response()
    }
}

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use kol_core::Error;
use serde::{Deserialize, Serialize};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    /// Machine-readable code, stable across releases.
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<serde_json::Value>,
    #[serde(skip)]
    pub status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            code: code.into(),
            message: message.into(),
            context: None,
            status: status.as_u16(),
        }
    }

    pub fn with_context(mut self, context: serde_json::Value) -> Self {
        self.context = Some(context);
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (status, code) = match e.root() {
            Error::Config(_) | Error::Json(_) | Error::Domain(_) | Error::DegenerateParameters(_) => {
                (StatusCode::BAD_REQUEST, "invalid_config")
            }
            Error::Dimension(_) => (StatusCode::BAD_REQUEST, "dimension_mismatch"),
            Error::Conditioning { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "conditioning"),
            Error::Instability { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "instability"),
            Error::Numeric(_) => (StatusCode::UNPROCESSABLE_ENTITY, "numeric"),
            Error::SingularReference { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "singular_reference"),
            Error::NoEradication => (StatusCode::UNPROCESSABLE_ENTITY, "no_eradication"),
            Error::Format(_) | Error::Io(_) | Error::Context { .. } => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        ApiError::new(status, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(&self)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;

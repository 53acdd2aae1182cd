use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use palimpsest_core::{Error, ErrorKind};
use serde::Serialize;
use serde_json::Value;

/// Uniform error body `{code, message, detail}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: Value,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { code: code.into(), message: message.into(), detail: Value::Null } }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn conflict(code: &str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::CONFLICT, code, message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn with_status(mut self, status: StatusCode) -> Self {
        self.status = status;
        self
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.body.detail = detail;
        self
    }
}

/// Caller mistakes are 4xx; numeric failures are 5xx.
pub fn status_for(err: &Error) -> StatusCode {
    match err {
        Error::Config(_) | Error::InvalidInput(_) | Error::CapExceeded { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        Error::MissingClass(_) => StatusCode::CONFLICT,
        _ if err.kind() == ErrorKind::Numeric => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let detail = match &err {
            Error::Disconnected { sizes } => serde_json::json!({ "component_sizes": sizes }),
            Error::CapExceeded { what, n, cap } => serde_json::json!({ "what": what, "n": n, "cap": cap }),
            _ => Value::Null,
        };
        ApiError::new(status_for(&err), err.code(), err.to_string()).with_detail(detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

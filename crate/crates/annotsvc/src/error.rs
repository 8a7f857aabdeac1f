use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use dialsec::{Error, ErrorKind};
use serde::Serialize;
use serde_json::Value;

/// JSON error body: `{code, message, details}`.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub details: Value,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                details: Value::Null,
            },
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.body.details = details;
        self
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::UnknownTask(id) => {
                Self::new(StatusCode::NOT_FOUND, "unknown_task", message).with_details(serde_json::json!({ "task_id": id }))
            }
            Error::PendingVerdicts(ids) => Self::new(StatusCode::CONFLICT, "pending_verdicts", message)
                .with_details(serde_json::json!({ "pending_clusters": ids })),
            Error::RoundOrder(_) => Self::new(StatusCode::CONFLICT, "round_order", message),
            Error::CorruptLog(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "corrupt_log", message),
            other => match other.kind() {
                ErrorKind::Data => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "data_error", message),
                ErrorKind::Pending => Self::new(StatusCode::CONFLICT, "pending", message),
                ErrorKind::Internal => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

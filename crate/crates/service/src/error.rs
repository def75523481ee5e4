use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};
use splatloop::PipelineError;

/// An HTTP error with a JSON body `{"error": ..., ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: Value,
}

impl ApiError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, body: json!({ "error": message.into(), "field": field }) }
    }

    pub fn missing(field: &str) -> Self {
        Self::field(field, format!("missing field `{field}`"))
    }

    pub fn not_found(id: &str) -> Self {
        Self { status: StatusCode::NOT_FOUND, body: json!({ "error": format!("no session `{id}`") }) }
    }

    pub fn status(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": message.into() }) }
    }

    pub fn pipeline(e: &PipelineError) -> Self {
        let stage = e.stage().map(|s| s.to_string()).unwrap_or_else(|| "pipeline".into());
        Self { status: StatusCode::UNPROCESSABLE_ENTITY, body: json!({ "error": e.to_string(), "stage": stage }) }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::status(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use areval_core::gateway::GatewayError;
use areval_core::pipeline::PipelineError;
use areval_core::store::StoreError;

/// REST error body: `{code, message}` with a matching status.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "NoSuchSession" | "NoSuchFrame" | "NoSuchResult" | "UnknownModel" | "UnknownProtocol" | "UnknownObject" => {
            StatusCode::NOT_FOUND
        }
        "DuplicateSession" | "DuplicateModel" | "DuplicateProtocol" | "OutOfOrderFrame" => StatusCode::CONFLICT,
        "StorageUnavailable" => StatusCode::SERVICE_UNAVAILABLE,
        "ModelTimeout" => StatusCode::GATEWAY_TIMEOUT,
        "ModelError" | "SchemaMismatch" => StatusCode::BAD_GATEWAY,
        "CorruptFrame" | "Malformed" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let code = areval_core::pipeline::store_error_code(&e);
        ApiError::new(status_for(code), code, e.to_string())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let code = e.code();
        ApiError::new(status_for(code), code, e.to_string())
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let code = e.code();
        ApiError::new(status_for(code), code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

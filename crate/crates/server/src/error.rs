use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use sparkle_core::config::ValidationReport;
use sparkle_core::engine::EngineError;
use sparkle_core::views::ViewError;
use sparkle_core::ConfigError;

/// Error body: `{"error": {"code", "message", "report"?}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub report: Option<ValidationReport>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.into(),
            report: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "PARSE_ERROR", message)
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "STATE_LOCKED" | "STATE_ERROR" | "RUN_SUSPENDED" | "REFERENCED_ELSEWHERE" => StatusCode::CONFLICT,
        "VALIDATION_FAILED" | "PARSE_ERROR" | "TIME_PAST_ERROR" => StatusCode::UNPROCESSABLE_ENTITY,
        "NOT_FOUND" => StatusCode::NOT_FOUND,
        "BAD_REQUEST" => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let report = match &e {
            EngineError::Config(ConfigError::Invalid(r)) => Some(r.clone()),
            _ => None,
        };
        let code = e.code();
        Self {
            status: status_for(code),
            code: code.to_string(),
            message: e.to_string(),
            report,
        }
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        EngineError::from(e).into()
    }
}

impl From<ViewError> for ApiError {
    fn from(e: ViewError) -> Self {
        let code = e.code();
        Self::new(status_for(code), code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({"code": self.code, "message": self.message});
        if let Some(report) = self.report {
            error["report"] = serde_json::to_value(report).expect("report serializes");
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

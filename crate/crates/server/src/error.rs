//! The API error body `{"error":{"code","message"}}` and the closed set of
//! codes.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};
use webxaii_core::config::Diagnostic;
use webxaii_core::connection::ConnectionError;
use webxaii_core::platform::PlatformError;
use webxaii_core::session::EngineError;

/// Every code the API can return, with its HTTP status.
pub const ERROR_CODES: [(&str, u16); 17] = [
    ("bad_request", 400),
    ("bad_credentials", 401),
    ("unauthorized", 401),
    ("token_expired", 401),
    ("forbidden", 403),
    ("not_found", 404),
    ("unknown_protocol", 404),
    ("method_not_allowed", 405),
    ("stale_view", 409),
    ("not_timed", 409),
    ("protocol_exists", 409),
    ("timed_out", 410),
    ("payload_invalid", 422),
    ("invalid_protocol", 422),
    ("invalid_users", 422),
    ("premature", 425),
    ("internal", 500),
];

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    /// Extra members of the error object (e.g. validation diagnostics).
    pub extra: Option<(&'static str, Value)>,
}

impl ApiError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        let status = ERROR_CODES
            .iter()
            .find(|(c, _)| *c == code)
            .map(|(_, s)| StatusCode::from_u16(*s).expect("valid status"))
            .unwrap_or_else(|| panic!("undocumented error code {code}"));
        Self {
            status,
            code,
            message: message.into(),
            extra: None,
        }
    }

    pub fn with(mut self, key: &'static str, value: Value) -> Self {
        self.extra = Some((key, value));
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new("bad_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new("not_found", message)
    }

    /// Logs the detail server-side and returns a body without internals.
    pub fn internal(detail: impl std::fmt::Display) -> Self {
        tracing::error!("internal error: {detail}");
        Self::new("internal", "internal server error")
    }

    pub fn invalid_protocol(diags: &[Diagnostic]) -> Self {
        Self::new("invalid_protocol", "the protocol has validation errors")
            .with("diagnostics", serde_json::to_value(diags).expect("diagnostics serialize"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some((key, value)) = self.extra {
            error[key] = value;
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

impl From<ConnectionError> for ApiError {
    fn from(e: ConnectionError) -> Self {
        match e {
            ConnectionError::BadCredentials => ApiError::new("bad_credentials", "login or access code is wrong"),
            ConnectionError::InvalidToken => ApiError::new("unauthorized", "missing or invalid session token"),
            ConnectionError::ExpiredToken => ApiError::new("token_expired", "session token expired; log in again"),
            ConnectionError::Storage(detail) => ApiError::internal(detail),
            other => ApiError::new("invalid_users", other.to_string()).with("details", json!([other.to_string()])),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        match e {
            EngineError::StaleView(_) => ApiError::new("stale_view", message),
            EngineError::PayloadInvalid(_) => ApiError::new("payload_invalid", message),
            EngineError::TimedOut { .. } => ApiError::new("timed_out", message),
            EngineError::Premature { remaining_ms, .. } => {
                ApiError::new("premature", message).with("remaining_ms", json!(remaining_ms))
            }
            EngineError::NotTimed(_) => ApiError::new("not_timed", message),
            EngineError::AssignmentMismatch { .. } => ApiError::new("forbidden", message),
            EngineError::TaskIncomplete { .. }
            | EngineError::UnknownTask(_)
            | EngineError::Store(_)
            | EngineError::Replay(_)
            | EngineError::SpecMismatch(_) => ApiError::internal(message),
        }
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        match e {
            PlatformError::Connection(c) => c.into(),
            PlatformError::Engine(e) => e.into(),
            PlatformError::Users(errors) => {
                let details: Vec<String> = errors.iter().map(ToString::to_string).collect();
                ApiError::new("invalid_users", format!("{} user record(s) rejected; nothing was imported", details.len()))
                    .with("details", json!(details))
            }
            PlatformError::UnknownProtocol(id) => ApiError::new("unknown_protocol", format!("unknown protocol {id:?}")),
            PlatformError::ProtocolExists(id) => {
                ApiError::new("protocol_exists", format!("protocol {id:?} is already loaded"))
            }
            PlatformError::InvalidProtocol(diags) => ApiError::invalid_protocol(&diags),
            PlatformError::Store(e) => ApiError::internal(e),
            PlatformError::Storage(e) => ApiError::internal(e),
        }
    }
}

//! Participant and admin JSON routes.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};
use webxaii_core::connection::UserImport;
use webxaii_core::events::ExportFormat;
use webxaii_core::session::Submission;

use crate::error::ApiError;
use crate::AppState;

/// Runs a platform operation (which may hash passwords or fsync) off the
/// async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8], code: &'static str) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(code, format!("malformed request body: {e}")))
}

fn bearer(headers: &HeaderMap) -> Result<String, ApiError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .ok_or_else(|| ApiError::new("unauthorized", "missing bearer token"))
}

#[derive(Deserialize)]
struct LoginRequest {
    login: String,
    access_code: String,
}

pub async fn login(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: LoginRequest = parse_body(&body, "bad_request")?;
    let out = blocking(move || {
        let now = app.clock.now();
        Ok(app.platform.login(&req.login, &req.access_code, now)?)
    })
    .await?;
    Ok(Json(out).into_response())
}

pub async fn view(State(app): State<Arc<AppState>>, headers: HeaderMap) -> Result<Response, ApiError> {
    let token = bearer(&headers)?;
    let out = blocking(move || Ok(app.platform.current_view(&token, app.clock.now())?)).await?;
    Ok(Json(out).into_response())
}

pub async fn submit(State(app): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let token = bearer(&headers)?;
    let sub: Submission = parse_body(&body, "payload_invalid")?;
    let out = blocking(move || Ok(app.platform.submit(&token, &sub, app.clock.now())?)).await?;
    Ok(Json(out).into_response())
}

#[derive(Deserialize)]
struct TimeoutRequest {
    view_id: String,
}

pub async fn timeout(State(app): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let token = bearer(&headers)?;
    let req: TimeoutRequest = parse_body(&body, "bad_request")?;
    let advanced = blocking(move || Ok(app.platform.notify_timeout(&token, &req.view_id, app.clock.now())?)).await?;
    Ok(Json(json!({ "advanced": advanced })).into_response())
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn require_admin(app: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let Some(expected) = &app.admin_token else {
        return Err(ApiError::new(
            "unauthorized",
            "admin API disabled: no admin token configured (WEBXAII_ADMIN_TOKEN)",
        ));
    };
    let given = headers.get("x-admin-token").map(|v| v.as_bytes()).unwrap_or_default();
    if constant_time_eq(given, expected.as_bytes()) {
        Ok(())
    } else {
        Err(ApiError::new("unauthorized", "wrong or missing X-Admin-Token"))
    }
}

pub async fn upload_protocol(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    require_admin(&app, &headers)?;
    let (id, warnings) = blocking(move || Ok(app.platform.upload_protocol(&body)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "warnings": warnings }))).into_response())
}

pub async fn list_protocols(State(app): State<Arc<AppState>>, headers: HeaderMap) -> Result<Response, ApiError> {
    require_admin(&app, &headers)?;
    Ok(Json(app.platform.protocol_summaries()).into_response())
}

pub async fn add_users(State(app): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    require_admin(&app, &headers)?;
    let batch: Vec<UserImport> = parse_body(&body, "bad_request")?;
    let records = blocking(move || Ok(app.platform.register_users(&batch, app.clock.now())?)).await?;
    let users: Vec<Value> = records
        .iter()
        .map(|u| json!({ "login": u.login, "protocol_id": u.protocol_id }))
        .collect();
    Ok(Json(json!({ "registered": users.len(), "users": users })).into_response())
}

#[derive(Deserialize)]
pub struct ExportQuery {
    protocol: Option<String>,
    format: Option<String>,
}

pub async fn export(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    require_admin(&app, &headers)?;
    let protocol = q
        .protocol
        .ok_or_else(|| ApiError::bad_request("query parameter \"protocol\" is required"))?;
    let format_name = q.format.unwrap_or_else(|| "csv".into());
    let format = ExportFormat::from_name(&format_name)
        .ok_or_else(|| ApiError::bad_request(format!("unknown format {format_name:?}; use csv or json")))?;
    let body = blocking(move || Ok(app.platform.export(&protocol, format)?)).await?;
    Ok(([(header::CONTENT_TYPE, format.content_type())], body).into_response())
}

pub async fn status(State(app): State<Arc<AppState>>, headers: HeaderMap) -> Result<Response, ApiError> {
    require_admin(&app, &headers)?;
    Ok(Json(json!({ "protocols": app.platform.status() })).into_response())
}

pub async fn api_not_found() -> ApiError {
    ApiError::not_found("no such API route")
}

pub async fn method_not_allowed() -> ApiError {
    ApiError::new("method_not_allowed", "method not allowed on this route")
}

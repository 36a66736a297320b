//! Static files: protocol media under `/assets/` and the participant UI
//! bundle for every other non-API path (history-mode routing).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{header, StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};
use percent_encoding::percent_decode_str;

use crate::error::ApiError;
use crate::AppState;

/// Served at `/` when no UI bundle directory is configured.
pub const BUILTIN_UI: &str = include_str!("../ui/index.html");

/// Why a requested asset path was refused.
#[derive(Debug, PartialEq, Eq)]
pub enum PathRejection {
    Traversal,
    Malformed,
}

/// Decodes a URL path below a static root into relative segments. Any `..`
/// segment (even percent-encoded), backslash or NUL is refused.
pub fn safe_relative(raw: &str) -> Result<PathBuf, PathRejection> {
    let decoded = percent_decode_str(raw)
        .decode_utf8()
        .map_err(|_| PathRejection::Malformed)?;
    if decoded.contains('\\') || decoded.contains('\0') {
        return Err(PathRejection::Traversal);
    }
    let mut out = PathBuf::new();
    for seg in decoded.split('/') {
        match seg {
            "" | "." => continue,
            ".." => return Err(PathRejection::Traversal),
            s if s.contains(':') => return Err(PathRejection::Traversal),
            s => out.push(s),
        }
    }
    if out.as_os_str().is_empty() {
        return Err(PathRejection::Malformed);
    }
    Ok(out)
}

/// Reads `rel` under `root`, refusing anything that resolves (e.g. through a
/// symlink) outside of it. `Ok(None)` when the file does not exist.
async fn read_below(root: &Path, rel: &Path) -> Result<Option<Vec<u8>>, PathRejection> {
    let Ok(root) = tokio::fs::canonicalize(root).await else {
        return Ok(None);
    };
    let Ok(full) = tokio::fs::canonicalize(root.join(rel)).await else {
        return Ok(None);
    };
    if !full.starts_with(&root) {
        return Err(PathRejection::Traversal);
    }
    if !tokio::fs::metadata(&full).await.is_ok_and(|m| m.is_file()) {
        return Ok(None);
    }
    Ok(tokio::fs::read(&full).await.ok())
}

fn file_response(rel: &Path, bytes: Vec<u8>) -> Response {
    let mime = mime_guess::from_path(rel).first_or_octet_stream();
    ([(header::CONTENT_TYPE, mime.essence_str().to_string())], bytes).into_response()
}

pub async fn serve_asset(State(app): State<Arc<AppState>>, uri: Uri) -> Response {
    let raw = uri.path().strip_prefix("/assets/").unwrap_or_default();
    let rel = match safe_relative(raw) {
        Ok(rel) => rel,
        Err(PathRejection::Traversal) => {
            return ApiError::new("forbidden", "path traversal is not allowed").into_response()
        }
        Err(PathRejection::Malformed) => return ApiError::not_found("no such asset").into_response(),
    };
    match read_below(&app.asset_dir, &rel).await {
        Ok(Some(bytes)) => file_response(&rel, bytes),
        Ok(None) => ApiError::not_found(format!("no such asset: {}", rel.display())).into_response(),
        Err(_) => ApiError::new("forbidden", "path traversal is not allowed").into_response(),
    }
}

/// Serves a bundle file when the path names one, otherwise the UI entry
/// document.
pub async fn spa(State(app): State<Arc<AppState>>, uri: Uri) -> Response {
    let Some(ui_dir) = &app.ui_dir else {
        return Html(BUILTIN_UI).into_response();
    };
    if let Ok(rel) = safe_relative(uri.path()) {
        if let Ok(Some(bytes)) = read_below(ui_dir, &rel).await {
            return file_response(&rel, bytes);
        }
    }
    match read_below(ui_dir, Path::new("index.html")).await {
        Ok(Some(bytes)) => file_response(Path::new("index.html"), bytes),
        _ => (StatusCode::NOT_FOUND, Html("<h1>UI bundle not found</h1>")).into_response(),
    }
}

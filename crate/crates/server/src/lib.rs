//! HTTP service: participant session API, token-protected admin API,
//! protocol media and the participant UI bundle.
//!
//! Handlers hold no state of their own; everything lives in the shared
//! [`Platform`], so any handler can serve any request.

mod api;
mod assets;
mod error;

use std::path::PathBuf;
use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;
use webxaii_core::platform::Platform;
use webxaii_core::time::{Clock, SystemClock};

pub use assets::{safe_relative, PathRejection, BUILTIN_UI};
pub use error::{ApiError, ERROR_CODES};

pub struct ServerConfig {
    /// Value expected in `X-Admin-Token`; admin routes are refused without it.
    pub admin_token: Option<String>,
    pub asset_dir: PathBuf,
    /// Directory with a built UI bundle (`index.html` + files). The built-in
    /// client is served when absent.
    pub ui_dir: Option<PathBuf>,
}

pub struct AppState {
    pub platform: Arc<Platform>,
    pub admin_token: Option<String>,
    pub asset_dir: PathBuf,
    pub ui_dir: Option<PathBuf>,
    pub clock: Arc<dyn Clock>,
}

pub fn router(platform: Arc<Platform>, config: ServerConfig) -> Router {
    router_with_clock(platform, config, Arc::new(SystemClock))
}

pub fn router_with_clock(platform: Arc<Platform>, config: ServerConfig, clock: Arc<dyn Clock>) -> Router {
    let state = Arc::new(AppState {
        platform,
        admin_token: config.admin_token.filter(|t| !t.is_empty()),
        asset_dir: config.asset_dir,
        ui_dir: config.ui_dir,
        clock,
    });
    let api = Router::new()
        .route("/login", post(api::login))
        .route("/session/view", get(api::view))
        .route("/session/submit", post(api::submit))
        .route("/session/timeout", post(api::timeout))
        .route("/admin/protocols", post(api::upload_protocol).get(api::list_protocols))
        .route("/admin/users", post(api::add_users))
        .route("/admin/export", get(api::export))
        .route("/admin/status", get(api::status))
        .fallback(api::api_not_found)
        .method_not_allowed_fallback(api::method_not_allowed);
    Router::new()
        .nest("/api", api)
        .route("/assets/{*path}", get(assets::serve_asset))
        .fallback(assets::spa)
        .with_state(state)
}

/// Serves until the future `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

//! HTTP/JSON API over retrieval sessions.
//!
//! Sessions are held in memory and addressed by random 128-bit ids. Requests
//! to one session are serialized; different sessions run concurrently over a
//! shared engine that `POST /admin/index` can replace without disturbing
//! sessions already open.

mod api;
pub mod config;
mod state;

use std::future::Future;
use std::sync::Arc;

pub use api::{router, ActionResponse, ApiError, ErrorBody, IndexReport, SessionView};
pub use config::{ConfigError, ServiceConfig};
pub use state::{AppState, StartupError};

/// Serves `state` on `listener` until `shutdown` resolves, then drains
/// in-flight requests.
pub async fn serve<F>(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: F,
) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

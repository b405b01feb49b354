//! HTTP+JSON API over [`cqa_core::Workspace`].
//!
//! Every request carries `Authorization: Bearer <token>`. Mutating routes
//! take the project version the client last saw in `If-Version` and an
//! optional `Idempotency-Key`; responses to them carry the new version both
//! in the body and in `X-Project-Version`. Workspace calls run on the
//! blocking pool so slow providers never stall unrelated requests.

pub mod error;
pub mod progress;
mod routes;
pub mod schemas;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::Router;
use cqa_core::Workspace;
use tokio::net::TcpListener;

pub use error::ApiError;
use progress::ProgressHub;

pub const VERSION_HEADER: &str = "x-project-version";
pub const IF_VERSION: &str = "if-version";
pub const IDEMPOTENCY_KEY: &str = "idempotency-key";

#[derive(Clone)]
pub struct AppState {
    pub workspace: Arc<Workspace>,
    pub hub: Arc<ProgressHub>,
}

impl AppState {
    pub fn new(workspace: Arc<Workspace>) -> Self {
        Self {
            workspace,
            hub: Arc::new(ProgressHub::default()),
        }
    }
}

pub fn app(workspace: Arc<Workspace>) -> Router {
    routes::router(AppState::new(workspace))
}

/// Serves until the future resolves or the process is interrupted.
pub async fn serve(listener: TcpListener, workspace: Arc<Workspace>) -> std::io::Result<()> {
    let addr = listener.local_addr()?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, app(workspace))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Binds `addr` and serves on a background task; returns the bound address.
pub async fn spawn(addr: SocketAddr, workspace: Arc<Workspace>) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    let router = app(workspace);
    tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    Ok(bound)
}

//! HTTP service around the feedback loop: students ask for feedback on a
//! draft as often as they like and submit a final report; every interaction
//! is appended to the event store. Read endpoints expose per-student history
//! and round analytics.
//!
//! All routes live under `/api`:
//!
//! | method | path                                              |
//! |--------|---------------------------------------------------|
//! | GET    | `/api/rounds`                                     |
//! | POST   | `/api/rounds/{round}/students/{student}/feedback` |
//! | POST   | `/api/rounds/{round}/students/{student}/submit`   |
//! | GET    | `/api/rounds/{round}/students/{student}/history`  |
//! | GET    | `/api/rounds/{round}/analytics/funnel`            |
//! | GET    | `/api/rounds/{round}/analytics/histogram`         |
//! | GET    | `/api/rounds/{round}/analytics/tasks`             |
//! | GET    | `/api/rounds/{round}/analytics/categories`        |
//!
//! Errors are JSON objects `{"error": <code>, "message": <text>}`.

mod api;
pub mod config;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use draftcheck_core::{EventStore, JsonlStore, StoreError};
use thiserror::Error;
use tokio::net::TcpListener;

pub use api::{
    router, AppState, Attempt, ErrorBody, FeedbackResponse, History, RoundInfo, SubmissionReceipt,
};
pub use config::{ConfigError, RoundConfig, ServiceConfig};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("round `{round}`: {source}")]
    Provider {
        round: String,
        #[source]
        source: draftcheck_core::gateway::ConfigError,
    },
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// Opens the JSONL store named in `config` and builds the shared state.
pub fn state_from_config(config: &ServiceConfig) -> Result<AppState, ServeError> {
    let store: Arc<dyn EventStore> = Arc::new(JsonlStore::open(&config.store_dir)?);
    AppState::new(config, store)
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    static_dir: Option<&std::path::Path>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let app = router(state, static_dir);
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

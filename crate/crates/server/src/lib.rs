//! JSON-over-HTTP service for generating fairytale books as background jobs
//! and browsing the resulting library.

pub mod auth;
pub mod jobs;
pub mod options;
pub mod routes;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use fairyland_core::{LibraryStore, Pipeline};
use tokio::net::TcpListener;

pub use auth::{hash_password, Credentials, Sessions};
pub use jobs::{Job, JobError, JobState, JobTable, WorkerPool};
pub use options::Options;
pub use routes::{router, AppState};

pub const LISTEN_ENV: &str = "FAIRYLAND_LISTEN";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub credentials: Option<Credentials>,
    pub token_ttl: Duration,
    pub workers: usize,
    /// How long shutdown waits for running jobs.
    pub shutdown_grace: Duration,
    pub options: Options,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            credentials: None,
            token_ttl: auth::DEFAULT_TOKEN_TTL,
            workers: jobs::DEFAULT_WORKERS,
            shutdown_grace: Duration::from_secs(30),
            options: Options::default(),
        }
    }
}

pub fn listen_addr_from_env() -> Result<SocketAddr, std::net::AddrParseError> {
    std::env::var(LISTEN_ENV)
        .ok()
        .filter(|v| !v.trim().is_empty())
        .unwrap_or_else(|| DEFAULT_LISTEN.to_string())
        .trim()
        .parse()
}

pub struct Server {
    state: AppState,
    grace: Duration,
}

impl Server {
    /// Starts the worker pool; requests are served by [`Server::run`].
    pub fn new(config: ServerConfig, pipeline: Pipeline, store: Arc<LibraryStore>) -> Self {
        let jobs = Arc::new(JobTable::new());
        let pool = Arc::new(WorkerPool::start(config.workers, pipeline, store.clone(), jobs.clone()));
        let state = AppState {
            sessions: Arc::new(Sessions::new(config.credentials, config.token_ttl)),
            options: Arc::new(config.options),
            store,
            jobs,
            pool,
        };
        Self { state, grace: config.shutdown_grace }
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    /// Serves until `shutdown` resolves, then drains the worker pool.
    pub async fn run(self, listener: TcpListener, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
        let app = router(self.state.clone()).into_make_service_with_connect_info::<SocketAddr>();
        tracing::info!(addr = %listener.local_addr()?, "listening");
        axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
        tracing::info!("draining jobs");
        self.state.pool.shutdown(self.grace).await;
        Ok(())
    }
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

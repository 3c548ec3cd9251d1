//! HTTP service over the mivs catalog, renderer and annotation store.
//!
//! [`AppState::new`] builds the shared state from a [`Config`];
//! [`router`] exposes it over HTTP and [`run`] serves it until a shutdown
//! signal, polling the configured sources in the background.

pub mod auth;
pub mod cache;
pub mod config;
pub mod metrics;
mod reqlog;
mod routes;

use std::future::Future;
use std::ops::Deref;
use std::sync::Arc;
use std::time::Duration;

use mivs_core::sync::{Poller, SourceScan, Store, StoreError};
use thiserror::Error;

pub use config::{Config, ConfigError};
pub use reqlog::RequestLog;
pub use routes::router;

use auth::{AuthError, LoginThrottle, Role, Sessions, Users};
use cache::VolumeCache;
use metrics::Metrics;

pub const USERS_FILE: &str = "users.json";

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub struct Inner {
    pub config: Config,
    pub store: Arc<Store>,
    pub users: Users,
    pub sessions: Sessions,
    pub throttle: LoginThrottle,
    pub cache: VolumeCache,
    pub metrics: Metrics,
    pub log: RequestLog,
}

/// Shared server state. Cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl Deref for AppState {
    type Target = Inner;

    fn deref(&self) -> &Inner {
        &self.0
    }
}

impl AppState {
    /// Opens the catalog store and user table and makes sure the bootstrap
    /// admin exists. An admin already present in the user table keeps its
    /// stored password.
    pub fn new(config: Config) -> Result<AppState, ServerError> {
        config.validate()?;
        let (store, users_path) = match &config.store_dir {
            Some(dir) => (Store::open(dir)?.0, Some(dir.join(USERS_FILE))),
            None => (Store::in_memory(), None),
        };
        let users = Users::open(users_path)?;
        if users.get(&config.admin.username).is_none() {
            users.create(&config.admin.username, &config.admin.password, Role::Admin)?;
        }
        let log = match &config.request_log {
            Some(path) => RequestLog::to_file(path)?,
            None => RequestLog::stderr(),
        };
        Ok(AppState(Arc::new(Inner {
            sessions: Sessions::new(Duration::from_secs(config.session_lifetime_secs)),
            cache: VolumeCache::new(config.cache_budget_bytes),
            store: Arc::new(store),
            users,
            throttle: LoginThrottle::default(),
            metrics: Metrics::default(),
            log,
            config,
        })))
    }

    /// Scans every configured source once.
    pub fn scan_sources(&self) -> Vec<SourceScan> {
        let out = self.store.scan(&self.config.sources);
        self.log.scan(&out);
        out
    }
}

/// Serves `state` on `listener` until `shutdown` resolves, then lets
/// in-flight requests finish. Sources are polled while serving.
pub async fn run(
    state: AppState,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    let poller = (!state.config.sources.is_empty()).then(|| {
        let log_state = state.clone();
        Poller::spawn(state.store.clone(), state.config.sources.clone(), move |scans| {
            log_state.log.scan(scans)
        })
    });
    let served = axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await;
    if let Some(p) = poller {
        let _ = tokio::task::spawn_blocking(move || p.stop()).await;
    }
    state.log.flush();
    Ok(served?)
}

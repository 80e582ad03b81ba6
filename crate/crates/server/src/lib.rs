//! Local HTTP/JSON service for running unmixing sessions from an analyst frontend.
//!
//! Sessions live in memory and are written to `<data_dir>/sessions/<id>.json`
//! after every change, so a restarted service picks up where it stopped. Steps
//! run on a blocking worker behind a pollable job resource.

mod error;
mod jobs;
mod routes;
mod store;
pub mod view;

use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use axum::Router;
use unmix_core::spectra::{read_reference_dir, Spectrum};

pub use error::{ApiError, ServiceError};
pub use jobs::{JobStatus, JobView};
pub use routes::{CreateSessionRequest, KnownBound};
pub use view::{ApiSessionView, MAX_VIEW_POINTS};

pub const DEFAULT_PORT: u16 = 8750;
pub const DEFAULT_BODY_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Directory of `<name>.csv` reference spectra offered to every session.
    pub library_dir: Option<PathBuf>,
    pub addr: SocketAddr,
    pub body_limit: usize,
    /// Permit binding a non-loopback address.
    pub allow_remote: bool,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            library_dir: None,
            addr: SocketAddr::from((Ipv4Addr::LOCALHOST, DEFAULT_PORT)),
            body_limit: DEFAULT_BODY_LIMIT,
            allow_remote: false,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: store::SessionStore,
    jobs: jobs::JobTable,
    library: Vec<Spectrum<f64>>,
}

impl AppState {
    /// Loads the reference library and every persisted session.
    pub fn open(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let library = match &cfg.library_dir {
            Some(dir) => read_reference_dir(dir)?,
            None => Vec::new(),
        };
        let store = store::SessionStore::open(cfg.data_dir.join("sessions"))?;
        tracing::info!(
            sessions = store.len(),
            references = library.len(),
            "service state loaded"
        );
        Ok(Self {
            inner: Arc::new(Inner {
                store,
                jobs: jobs::JobTable::default(),
                library,
            }),
        })
    }
}

pub fn router(state: AppState, body_limit: usize) -> Router {
    routes::router(state, body_limit)
}

/// Binds `cfg.addr` and serves until interrupted.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    if !cfg.addr.ip().is_loopback() && !cfg.allow_remote {
        return Err(ServiceError::NotLoopback(cfg.addr));
    }
    let state = AppState::open(&cfg)?;
    let listener = tokio::net::TcpListener::bind(cfg.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state, cfg.body_limit))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

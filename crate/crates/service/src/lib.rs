//! HTTP/JSON API over the KOL engine: train surrogates, predict trajectories,
//! simulate the true ODE and run the optimal-control solvers.
//!
//! Every non-2xx response carries an [`ApiError`] body. Model ids are
//! sequential (`m1`, `m2`, ...) so the API is a deterministic function of the
//! request history.

mod api;
mod error;

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::handler::HandlerWithoutStateExt;
use axum::routing::{get, post};
use axum::Router;
use kol_core::KolModel;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

pub use api::{
    ModelInfo, OptimizeRequest, PredictRequest, SimulateRequest, TrainRequest, TrainResponse, TrajectoryResponse,
};
pub use error::{ApiError, ApiResult};

/// Default cap on training-set size for `POST /models`.
pub const DEFAULT_MAX_TRAIN: usize = 2000;

/// A published model with its metadata. Never mutated after insertion.
#[derive(Debug)]
pub struct Entry {
    pub info: ModelInfo,
    pub model: KolModel,
}

/// Shared server state.
#[derive(Debug)]
pub struct AppState {
    models: RwLock<BTreeMap<String, Arc<Entry>>>,
    next_id: AtomicU64,
    /// Serialises training so reported fit times are not skewed.
    training: tokio::sync::Mutex<()>,
    pub max_train: usize,
}

impl AppState {
    pub fn new(max_train: usize) -> Self {
        AppState {
            models: RwLock::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            training: tokio::sync::Mutex::new(()),
            max_train,
        }
    }

    /// Publishes a model under a fresh id and returns it.
    pub fn publish(&self, build: impl FnOnce(String, u64) -> Entry) -> Arc<Entry> {
        let seq = self.next_id.fetch_add(1, Ordering::SeqCst);
        let entry = Arc::new(build(format!("m{seq}"), seq));
        self.models
            .write()
            .expect("registry lock")
            .insert(entry.info.id.clone(), entry.clone());
        entry
    }

    /// Publishes a model loaded from disk.
    pub fn publish_loaded(&self, model: KolModel, source: Option<String>) -> Arc<Entry> {
        self.publish(|id, seq| Entry {
            info: ModelInfo::from_model(id, seq, &model, None, None, None, source),
            model,
        })
    }

    pub fn get(&self, id: &str) -> ApiResult<Arc<Entry>> {
        self.models
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no model with id '{id}'")))
    }

    pub fn list(&self) -> Vec<ModelInfo> {
        let map = self.models.read().expect("registry lock");
        let mut v: Vec<ModelInfo> = map.values().map(|e| e.info.clone()).collect();
        v.sort_by_key(|i| i.seq);
        v
    }
}

/// Builds the router. When `assets` names an existing directory it is
/// served for every path outside the API.
pub fn router(state: Arc<AppState>, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(api::health))
        .route("/models", get(api::list_models).post(api::train))
        .route("/models/{id}", get(api::get_model))
        .route("/models/{id}/predict", post(api::predict))
        .route("/models/{id}/optimize", post(api::optimize))
        .route("/simulate", post(api::simulate))
        .method_not_allowed_fallback(api::method_not_allowed)
        .with_state(state);
    let api = match assets.filter(|p| p.is_dir()) {
        Some(dir) => api.fallback_service(ServeDir::new(dir).fallback(api::not_found.into_service())),
        None => api.fallback(api::not_found),
    };
    api.layer(CorsLayer::permissive())
}

/// Server settings.
#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub bind: SocketAddr,
    pub assets: Option<PathBuf>,
    pub max_train: usize,
    /// Model files to publish at start-up.
    pub preload: Vec<PathBuf>,
}

/// Serves until `shutdown` resolves. `on_bound` receives the actual address
/// (useful with port 0).
pub async fn serve(
    cfg: ServeConfig,
    on_bound: impl FnOnce(SocketAddr),
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let state = Arc::new(AppState::new(cfg.max_train));
    for path in &cfg.preload {
        let model = KolModel::load(path)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
        state.publish_loaded(model, Some(path.display().to_string()));
    }
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(state, cfg.assets))
        .with_graceful_shutdown(shutdown)
        .await
}

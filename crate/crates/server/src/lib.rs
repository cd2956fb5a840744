//! Read-only HTTP service over a directory of dataset stores.
//!
//! Routes:
//!
//! ```text
//! GET  /healthz
//! GET  /api/datasets
//! GET  /api/datasets/{ds}/manifest
//! GET  /api/datasets/{ds}/tiles/{layer}/{ix}/{iy}
//! GET  /api/datasets/{ds}/items/{id}
//! POST /api/datasets/{ds}/search
//! GET  /media/{ds}/{id}/{size}        size = 32 | 128 | 512 | original
//! ```

mod api;

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use aeye_core::index::{self, IndexKind, VectorIndex};
use aeye_core::search::{Embedder, HttpEmbedder, MockEmbedder};
use aeye_core::store::{DatasetStore, STORE_INFO};
use aeye_core::tiling::{persist, TilePyramid};
use axum::http::HeaderValue;
use axum::Router;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use api::{ErrorBody, ItemDetail, SearchResponse, TileEntry, TilePayload, PLACEHOLDER_HEADER};

/// Default `Cache-Control: max-age` for media and tiles: one year.
pub const DEFAULT_MEDIA_MAX_AGE: u64 = 365 * 24 * 3600;
pub const BODY_LIMIT: usize = 16 * 1024 * 1024;
/// Seconds suggested to clients when the embedder is down.
pub const RETRY_AFTER_SECS: u64 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum CorsPolicy {
    /// No cross-origin headers.
    #[default]
    SameOrigin,
    Origins(Vec<String>),
    /// Development mode: any origin.
    Any,
}

/// Where live text and image queries get embedded.
#[derive(Clone, Default)]
pub enum EmbedderSpec {
    /// Text and image search answer 503.
    #[default]
    None,
    /// Deterministic offline embedder.
    Mock,
    Http {
        url: String,
        timeout: Duration,
        in_flight: usize,
    },
    Custom(Arc<dyn Embedder>),
}

impl EmbedderSpec {
    /// Builds the embedder for datasets of dimension `dim`.
    pub fn resolve(&self, dim: usize) -> Option<Arc<dyn Embedder>> {
        match self {
            EmbedderSpec::None => None,
            EmbedderSpec::Mock => Some(Arc::new(MockEmbedder::new(dim))),
            EmbedderSpec::Http {
                url,
                timeout,
                in_flight,
            } => Some(Arc::new(HttpEmbedder::with_options(
                url.clone(),
                dim,
                *timeout,
                *in_flight,
            ))),
            EmbedderSpec::Custom(e) => Some(e.clone()),
        }
    }
}

#[derive(Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub datasets_root: PathBuf,
    pub media_max_age: u64,
    pub embedder: EmbedderSpec,
    pub cors: CorsPolicy,
    /// Start even when no dataset could be loaded.
    pub allow_empty: bool,
}

impl ServerConfig {
    pub fn new(datasets_root: impl Into<PathBuf>) -> Self {
        ServerConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            datasets_root: datasets_root.into(),
            media_max_age: DEFAULT_MEDIA_MAX_AGE,
            embedder: EmbedderSpec::None,
            cors: CorsPolicy::SameOrigin,
            allow_empty: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("no loadable dataset under {}", .0.display())]
    NoDatasets(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A dataset held in memory for serving.
pub struct Dataset {
    pub store: DatasetStore,
    pub pyramid: TilePyramid,
    pub index: VectorIndex,
}

impl Dataset {
    /// Loads store, pyramid and index. Stores without a persisted index are
    /// served with an in-memory flat index.
    pub fn load(root: &Path) -> Result<Self, String> {
        let store = DatasetStore::open(root).map_err(|e| e.to_string())?;
        let pyramid = persist::load(root).map_err(|e| e.to_string())?;
        let proj = store.projection().ok_or("store has no projection")?;
        if pyramid.manifest.item_count as usize != store.len() || proj.points.len() != store.len() {
            return Err("pyramid does not match the store".into());
        }
        let index = if index::has_index(root) {
            index::load(&store).map_err(|e| e.to_string())?
        } else {
            index::build_index(&store, IndexKind::Flat, &Default::default()).map_err(|e| e.to_string())?
        };
        Ok(Dataset { store, pyramid, index })
    }
}

pub struct AppState {
    pub datasets: BTreeMap<String, Arc<Dataset>>,
    pub embedder: Option<Arc<dyn Embedder>>,
    pub media_max_age: u64,
    placeholder: Vec<u8>,
}

impl AppState {
    pub fn new(
        datasets: BTreeMap<String, Arc<Dataset>>,
        embedder: Option<Arc<dyn Embedder>>,
        media_max_age: u64,
    ) -> Self {
        AppState {
            datasets,
            embedder,
            media_max_age,
            placeholder: api::placeholder_png(),
        }
    }
}

/// Loaded datasets by name, and the directories that were skipped with why.
pub type LoadedDatasets = (BTreeMap<String, Arc<Dataset>>, Vec<(PathBuf, String)>);

/// Loads every store directly under `root`, keyed by store name. Stores that
/// fail to load are skipped and reported with their reason.
pub fn load_datasets(root: &Path) -> std::io::Result<LoadedDatasets> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(STORE_INFO).is_file())
        .collect();
    dirs.sort();
    let mut loaded = BTreeMap::new();
    let mut skipped = Vec::new();
    for dir in dirs {
        match Dataset::load(&dir) {
            Ok(ds) => {
                let name = ds.store.name().to_string();
                match loaded.entry(name) {
                    Entry::Occupied(e) => skipped.push((dir, format!("duplicate dataset name {:?}", e.key()))),
                    Entry::Vacant(e) => {
                        e.insert(Arc::new(ds));
                    }
                }
            }
            Err(msg) => skipped.push((dir, msg)),
        }
    }
    Ok((loaded, skipped))
}

/// Loads the datasets named by `cfg` and builds the application state.
pub fn prepare(cfg: &ServerConfig) -> Result<AppState, ServerError> {
    let (datasets, skipped) = load_datasets(&cfg.datasets_root)?;
    for (dir, why) in &skipped {
        tracing::warn!(store = %dir.display(), "skipping dataset: {why}");
    }
    if datasets.is_empty() && !cfg.allow_empty {
        return Err(ServerError::NoDatasets(cfg.datasets_root.clone()));
    }
    for (name, ds) in &datasets {
        tracing::info!(
            dataset = %name,
            items = ds.store.len(),
            depth = ds.pyramid.depth(),
            index = ?ds.index.kind(),
            "dataset loaded"
        );
    }
    // one embedding service serves every dataset; it speaks one dimension
    let dim = datasets.values().next().map(|d| d.store.dimension());
    for (name, ds) in &datasets {
        if Some(ds.store.dimension()) != dim {
            tracing::warn!(dataset = %name, "dimension differs from the embedder's; text and image search will fail");
        }
    }
    let embedder = dim.and_then(|d| cfg.embedder.resolve(d));
    Ok(AppState::new(datasets, embedder, cfg.media_max_age))
}

pub fn router(state: AppState, cors: &CorsPolicy) -> Router {
    let app = api::routes(Arc::new(state));
    match cors {
        CorsPolicy::SameOrigin => app,
        CorsPolicy::Any => app.layer(CorsLayer::permissive()),
        CorsPolicy::Origins(list) => {
            let origins: Vec<HeaderValue> = list.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
            app.layer(
                CorsLayer::new()
                    .allow_origin(AllowOrigin::list(origins))
                    .allow_methods(tower_http::cors::Any)
                    .allow_headers(tower_http::cors::Any),
            )
        }
    }
}

/// Serves until ctrl-c.
pub async fn serve(cfg: ServerConfig) -> Result<(), ServerError> {
    let state = prepare(&cfg)?;
    let app = router(state, &cfg.cors);
    serve_router(app, cfg.bind).await
}

pub async fn serve_router(app: Router, bind: SocketAddr) -> Result<(), ServerError> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// A server running on a background thread; shuts down on drop.
pub struct RunningServer {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningServer {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Starts `app` on `addr` (port 0 picks a free port) in a background thread.
pub fn spawn(app: Router, addr: SocketAddr) -> std::io::Result<RunningServer> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(RunningServer {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

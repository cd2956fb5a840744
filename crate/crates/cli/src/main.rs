//! `aeye`: batch pipeline driver.
//!
//! ```text
//! aeye ingest   --vectors v.aev --meta m.tsv [--captions c.tsv] [--images dir] --out store/
//! aeye project  --store store/ [--coords points.aec]
//! aeye tile     --store store/ [--k 25] [--seed 7]
//! aeye index    --store store/ [--kind hnsw|flat]
//! aeye validate --store store/
//! aeye serve    --root stores/ [--bind 127.0.0.1:8080]
//! aeye export   --store store/ --out atlas.tar
//! ```
//!
//! Exit codes: 0 ok, 2 bad flags, 3 missing stage input, 4 validation
//! failure, 5 I/O.

use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aeye_core::format::FormatError;
use aeye_core::index::{HnswParams, IndexError, IndexKind};
use aeye_core::ingest::{ingest_embeddings, IngestError, IngestOptions};
use aeye_core::pipeline::{self, PipelineError, ProjectionSource};
use aeye_core::projection::ProjectionError;
use aeye_core::store::{StoreError, StoreLock};
use aeye_core::tiling::{TilingConfig, TilingError};
use aeye_server::{CorsPolicy, EmbedderSpec, ServerConfig, ServerError};
use clap::{Parser, Subcommand};
use tracing::{error, info};

const EXIT_FLAGS: u8 = 2;
const EXIT_MISSING: u8 = 3;
const EXIT_INVALID: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "aeye", version, about = "Build and serve zoomable embedding atlases")]
struct Cli {
    /// Log filter, e.g. `info` or `aeye=debug`.
    #[arg(long, global = true, default_value = "info", env = "AEYE_LOG")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a store from an AEV1 vector file and per-item metadata.
    Ingest {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        captions: Option<PathBuf>,
        /// Directory holding the files named by each item's `filename`.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Dataset name (default: output directory name).
        #[arg(long)]
        name: Option<String>,
    },
    /// Compute 2-D positions: PCA, or adopt an external AEC1 coordinate file.
    Project {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        coords: Option<PathBuf>,
    },
    /// Build the tile pyramid.
    Tile {
        #[arg(long)]
        store: PathBuf,
        /// Representatives per tile.
        #[arg(long, default_value_t = 25)]
        k: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        max_depth: u32,
        #[arg(long, default_value_t = 50)]
        max_iterations: usize,
    },
    /// Build the vector index.
    Index {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "hnsw")]
        kind: IndexKind,
        #[arg(long, default_value_t = 16)]
        m: usize,
        #[arg(long, default_value_t = 200)]
        ef_construction: usize,
        #[arg(long, default_value_t = 64)]
        ef_search: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Check every pyramid invariant and spot-check the index.
    Validate {
        #[arg(long)]
        store: PathBuf,
        /// Items used for index spot checks.
        #[arg(long, default_value_t = 200)]
        spot_checks: usize,
    },
    /// Serve every store under a directory over HTTP.
    Serve {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Embedding service for text and image queries.
        #[arg(long, env = "AEYE_EMBEDDER_URL")]
        embedder_url: Option<String>,
        /// Use the built-in deterministic embedder instead of a service.
        #[arg(long, conflicts_with = "embedder_url")]
        mock_embedder: bool,
        #[arg(long, default_value_t = 10)]
        embedder_timeout_secs: u64,
        #[arg(long, default_value_t = 4)]
        embedder_in_flight: usize,
        /// Allowed cross-origin caller; repeatable.
        #[arg(long)]
        cors_origin: Vec<String>,
        /// Allow any origin (development).
        #[arg(long, conflicts_with = "cors_origin")]
        cors_any: bool,
        #[arg(long, default_value_t = aeye_server::DEFAULT_MEDIA_MAX_AGE)]
        media_max_age: u64,
        /// Start even if no dataset loads.
        #[arg(long)]
        allow_empty: bool,
    },
    /// Write the atlas (projection, pyramid, index) as a tar archive.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl ToString) -> Self {
        Failure {
            code,
            msg: msg.to_string(),
        }
    }
}

fn io_code(e: &io::Error) -> u8 {
    if e.kind() == io::ErrorKind::NotFound {
        EXIT_MISSING
    } else {
        EXIT_IO
    }
}

fn format_code(e: &FormatError) -> u8 {
    match e {
        FormatError::Io { source, .. } => io_code(source),
        _ => EXIT_INVALID,
    }
}

fn store_code(e: &StoreError) -> u8 {
    match e {
        StoreError::NotAStore(_) => EXIT_MISSING,
        StoreError::Corrupt { .. } => EXIT_INVALID,
        StoreError::Locked(_) => EXIT_IO,
        StoreError::Format(f) => format_code(f),
        StoreError::Io { source, .. } => io_code(source),
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::MissingStage(_) => EXIT_MISSING,
            PipelineError::Store(s) => store_code(s),
            PipelineError::Projection(ProjectionError::Store(s)) => store_code(s),
            PipelineError::Projection(ProjectionError::Format(f)) => format_code(f),
            PipelineError::Projection(_) => EXIT_INVALID,
            PipelineError::Tiling(TilingError::ZeroK | TilingError::BadDepthCap(_)) => EXIT_FLAGS,
            PipelineError::Tiling(_) => EXIT_INVALID,
            PipelineError::Index(IndexError::BadParams(_)) => EXIT_FLAGS,
            PipelineError::Index(IndexError::Store(s)) => store_code(s),
            PipelineError::Index(_) => EXIT_INVALID,
            PipelineError::Io { source, .. } => io_code(source),
        };
        Failure::new(code, e)
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        let code = match &e {
            IngestError::Format(f) => format_code(f),
            IngestError::Store(s) => store_code(s),
            IngestError::AlreadyExists(_) => EXIT_IO,
            _ => EXIT_INVALID,
        };
        Failure::new(code, e)
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure::new(store_code(&e), e)
    }
}

/// Logs a line the benchmarks parse: `stage=<name> elapsed_s=<secs>`.
fn timed<T>(stage: &str, f: impl FnOnce() -> Result<T, Failure>) -> Result<T, Failure> {
    let start = Instant::now();
    let out = f()?;
    info!(target: "aeye::timer", "stage={stage} elapsed_s={:.3}", start.elapsed().as_secs_f64());
    Ok(out)
}

fn lock(store: &Path) -> Result<StoreLock, Failure> {
    if !store.join(aeye_core::store::STORE_INFO).is_file() {
        return Err(Failure::new(
            EXIT_MISSING,
            format!("{} is not an ingested store (run ingest first)", store.display()),
        ));
    }
    Ok(StoreLock::acquire(store)?)
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Ingest {
            vectors,
            meta,
            captions,
            images,
            out,
            name,
        } => {
            let opts = IngestOptions {
                vectors,
                metadata: meta,
                captions,
                images_dir: images,
                out,
                name,
            };
            let (store, report) = timed("ingest", || Ok(ingest_embeddings(&opts)?))?;
            info!(
                store = %store.root().display(),
                items = report.items,
                dimension = report.dimension,
                captions = report.captions,
                images = report.images,
                missing_images = report.missing_images.len(),
                "store created"
            );
        }
        Command::Project { store, coords } => {
            let _lock = lock(&store)?;
            let source = match &coords {
                Some(p) => ProjectionSource::External(p),
                None => ProjectionSource::Pca,
            };
            let r = timed("project", || Ok(pipeline::project_store(&store, source)?))?;
            info!(method = %r.method, rank = r.rank, points = r.points.len(), "projection written");
        }
        Command::Tile {
            store,
            k,
            seed,
            max_depth,
            max_iterations,
        } => {
            let _lock = lock(&store)?;
            let cfg = TilingConfig {
                k,
                rng_seed: seed,
                max_depth_cap: max_depth,
                max_iterations,
                ..TilingConfig::default()
            };
            info!(k, seed, max_depth, max_iterations, "tiling");
            let p = timed("tile", || Ok(pipeline::tile_store(&store, &cfg)?))?;
            if p.manifest.depth_capped {
                tracing::warn!(depth = p.manifest.depth, "depth cap reached; final tiles may exceed k");
            }
            info!(
                depth = p.manifest.depth,
                tiles = p.manifest.per_layer_nonempty_tile_counts.iter().sum::<u64>(),
                digest = %p.digest(),
                "pyramid written"
            );
        }
        Command::Index {
            store,
            kind,
            m,
            ef_construction,
            ef_search,
            seed,
        } => {
            let _lock = lock(&store)?;
            let params = HnswParams {
                m,
                m0: 2 * m,
                ef_construction,
                ef_search,
                seed,
            };
            info!(kind = ?kind, m, ef_construction, ef_search, seed, "indexing");
            let idx = timed("index", || Ok(pipeline::index_store(&store, kind, &params)?))?;
            info!(items = idx.len(), dimension = idx.dimension(), "index written");
        }
        Command::Validate { store, spot_checks } => {
            let _lock = lock(&store)?;
            let report = timed("validate", || Ok(pipeline::validate_store(&store, spot_checks)?))?;
            if !report.is_ok() {
                let msgs = report.messages();
                for m in &msgs {
                    error!("{m}");
                }
                return Err(Failure::new(EXIT_INVALID, format!("{} violation(s)", msgs.len())));
            }
            info!(
                tiles = report.tiles_checked,
                index_queries = report.index_queries,
                "store is valid"
            );
        }
        Command::Export { store, out } => {
            let _lock = lock(&store)?;
            let files = timed("export", || Ok(pipeline::export_store(&store, &out)?))?;
            info!(files, out = %out.display(), "archive written");
        }
        Command::Serve {
            root,
            bind,
            embedder_url,
            mock_embedder,
            embedder_timeout_secs,
            embedder_in_flight,
            cors_origin,
            cors_any,
            media_max_age,
            allow_empty,
        } => {
            let mut cfg = ServerConfig::new(root);
            cfg.bind = bind;
            cfg.media_max_age = media_max_age;
            cfg.allow_empty = allow_empty;
            cfg.cors = if cors_any {
                CorsPolicy::Any
            } else if !cors_origin.is_empty() {
                CorsPolicy::Origins(cors_origin)
            } else {
                CorsPolicy::SameOrigin
            };
            cfg.embedder = match (embedder_url, mock_embedder) {
                (_, true) => EmbedderSpec::Mock,
                (Some(url), false) => EmbedderSpec::Http {
                    url,
                    timeout: Duration::from_secs(embedder_timeout_secs),
                    in_flight: embedder_in_flight,
                },
                (None, false) => EmbedderSpec::None,
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::new(EXIT_IO, e))?;
            rt.block_on(aeye_server::serve(cfg)).map_err(|e| match e {
                ServerError::NoDatasets(_) => Failure::new(EXIT_MISSING, e),
                ServerError::Io(io) => Failure::new(EXIT_IO, io),
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_FLAGS } else { 0 });
        }
    };
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| "info".into());
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .with_ansi(false)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

//! On-disk dataset store.
//!
//! ```text
//! <root>/
//!   store.json                 name, item count, dimension
//!   vectors.aev                ingested vectors (AEV1, canonical re-encoding)
//!   normalized.aev             unit-norm copies used for cosine search
//!   metadata.tsv               one key:value record per item
//!   captions.tsv               <id>\t<caption>, ascending id
//!   assets/original/<id>.<ext> source images
//!   assets/thumb/<size>/<id>.jpg
//!   projection/projection.json + points.aec
//!   pyramid/manifest.json + L<layer>/<ix>_<iy>.tile
//!   index/index.json (+ hnsw.bin)
//! ```
//!
//! A store is written once by `ingest` and extended stage by stage; after
//! that every reader treats it as immutable.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

use crate::format::{self, FormatError, VectorMatrix};
use crate::model::{AtlasManifest, ItemId, Metadata};
use crate::projection::{self, ProjectionResult};

pub const STORE_INFO: &str = "store.json";
pub const VECTORS: &str = "vectors.aev";
pub const NORMALIZED: &str = "normalized.aev";
pub const METADATA: &str = "metadata.tsv";
pub const CAPTIONS: &str = "captions.tsv";
pub const ASSETS_DIR: &str = "assets";
pub const PROJECTION_DIR: &str = "projection";
pub const PYRAMID_DIR: &str = "pyramid";
pub const INDEX_DIR: &str = "index";
pub const LOCK_FILE: &str = ".aeye.lock";

pub const THUMBNAIL_SIZES: [u32; 3] = [32, 128, 512];

const STORE_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{0} is not a dataset store (missing {STORE_INFO})")]
    NotAStore(PathBuf),
    #[error("invalid {file}: {msg}")]
    Corrupt { file: String, msg: String },
    #[error("store {0} is locked by another command")]
    Locked(PathBuf),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn corrupt(file: impl Into<String>, msg: impl ToString) -> Self {
        StoreError::Corrupt {
            file: file.into(),
            msg: msg.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreInfo {
    pub format: u32,
    pub name: String,
    pub item_count: u64,
    pub dimension: u32,
}

impl StoreInfo {
    pub fn new(name: impl Into<String>, item_count: usize, dimension: usize) -> Self {
        StoreInfo {
            format: STORE_FORMAT,
            name: name.into(),
            item_count: item_count as u64,
            dimension: dimension as u32,
        }
    }
}

/// Read handle over an ingested store.
#[derive(Debug, Clone)]
pub struct DatasetStore {
    root: PathBuf,
    info: StoreInfo,
    normalized: Arc<VectorMatrix>,
    metadata: Vec<Metadata>,
    captions: Vec<Option<String>>,
    projection: Option<ProjectionResult>,
    manifest: Option<AtlasManifest>,
}

impl DatasetStore {
    /// Opens a store, loading the normalized vectors, metadata, captions and
    /// (when present) the projection and pyramid manifest.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        let info_path = root.join(STORE_INFO);
        if !info_path.is_file() {
            return Err(StoreError::NotAStore(root));
        }
        let info: StoreInfo = read_json(&info_path)?;
        if info.format != STORE_FORMAT {
            return Err(StoreError::corrupt(
                STORE_INFO,
                format!("unsupported format {}", info.format),
            ));
        }
        let n = info.item_count as usize;

        let normalized = format::read_vectors(&root.join(NORMALIZED))?;
        if normalized.rows != n || normalized.dim != info.dimension as usize {
            return Err(StoreError::corrupt(
                NORMALIZED,
                format!(
                    "shape {}x{} does not match store info {}x{}",
                    normalized.rows, normalized.dim, n, info.dimension
                ),
            ));
        }

        let meta_text = read_string(&root.join(METADATA))?;
        let metadata = format::parse_metadata(&meta_text)?;
        if metadata.len() != n {
            return Err(StoreError::corrupt(
                METADATA,
                format!("{} records for {n} items", metadata.len()),
            ));
        }

        let captions_path = root.join(CAPTIONS);
        let captions = if captions_path.is_file() {
            format::parse_captions(&read_string(&captions_path)?, n)?
        } else {
            vec![None; n]
        };

        let projection = projection::load(&root)?;
        if let Some(p) = &projection {
            if p.points.len() != n {
                return Err(StoreError::corrupt(
                    PROJECTION_DIR,
                    format!("{} points for {n} items", p.points.len()),
                ));
            }
        }

        let manifest_path = root.join(PYRAMID_DIR).join("manifest.json");
        let manifest = if manifest_path.is_file() {
            Some(read_json(&manifest_path)?)
        } else {
            None
        };

        Ok(DatasetStore {
            root,
            info,
            normalized: Arc::new(normalized),
            metadata,
            captions,
            projection,
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn info(&self) -> &StoreInfo {
        &self.info
    }

    pub fn name(&self) -> &str {
        &self.info.name
    }

    pub fn len(&self) -> usize {
        self.info.item_count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dimension(&self) -> usize {
        self.info.dimension as usize
    }

    pub fn contains(&self, id: ItemId) -> bool {
        id.index() < self.len()
    }

    /// Unit-norm copies of all vectors.
    pub fn normalized(&self) -> &Arc<VectorMatrix> {
        &self.normalized
    }

    pub fn normalized_vector(&self, id: ItemId) -> Option<&[f32]> {
        self.contains(id).then(|| self.normalized.row(id.index()))
    }

    /// Reads the vectors as ingested (not normalized).
    pub fn raw_vectors(&self) -> Result<VectorMatrix, StoreError> {
        Ok(format::read_vectors(&self.root.join(VECTORS))?)
    }

    pub fn metadata(&self, id: ItemId) -> Option<&Metadata> {
        self.metadata.get(id.index())
    }

    pub fn caption(&self, id: ItemId) -> Option<&str> {
        self.captions.get(id.index()).and_then(|c| c.as_deref())
    }

    pub fn projection(&self) -> Option<&ProjectionResult> {
        self.projection.as_ref()
    }

    pub fn manifest(&self) -> Option<&AtlasManifest> {
        self.manifest.as_ref()
    }

    pub fn thumbnail_path(&self, id: ItemId, size: u32) -> PathBuf {
        thumbnail_path(&self.root, id, size)
    }

    /// Path of the stored original image, if ingest copied one.
    pub fn original_path(&self, id: ItemId) -> Option<PathBuf> {
        let dir = self.root.join(ASSETS_DIR).join("original");
        let stem = id.to_string();
        fs::read_dir(&dir)
            .ok()?
            .flatten()
            .map(|e| e.path())
            .find(|p| p.file_stem().and_then(|s| s.to_str()) == Some(stem.as_str()))
    }
}

pub fn thumbnail_path(root: &Path, id: ItemId, size: u32) -> PathBuf {
    root.join(ASSETS_DIR)
        .join("thumb")
        .join(size.to_string())
        .join(format!("{id}.jpg"))
}

pub(crate) fn read_string(path: &Path) -> Result<String, StoreError> {
    fs::read_to_string(path).map_err(|e| StoreError::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = read_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        let file = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        StoreError::corrupt(file, e)
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|e| StoreError::io(path, e))
}

/// Content digest of every file under `root` (relative paths and bytes, in
/// sorted path order). The lock file is excluded.
pub fn store_digest(root: &Path) -> Result<String, StoreError> {
    let mut hasher = Sha256::new();
    let walker = WalkDir::new(root).sort_by_file_name().into_iter();
    for entry in walker {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            StoreError::io(&path, e.into())
        })?;
        if !entry.file_type().is_file() || entry.file_name() == LOCK_FILE {
            continue;
        }
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path());
        let rel = rel.to_string_lossy().replace('\\', "/");
        hasher.update(rel.as_bytes());
        hasher.update([0u8]);
        let mut f = File::open(entry.path()).map_err(|e| StoreError::io(entry.path(), e))?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf).map_err(|e| StoreError::io(entry.path(), e))?;
        hasher.update((buf.len() as u64).to_le_bytes());
        hasher.update(&buf);
    }
    Ok(hex(&hasher.finalize()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Exclusive per-store lock held for the duration of one pipeline command.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    pub fn acquire(root: &Path) -> Result<Self, StoreError> {
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(StoreLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Locked(root.to_path_buf())),
            Err(e) => Err(StoreError::io(&path, e)),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

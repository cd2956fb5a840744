//! Store-level stage drivers shared by the command line and the tests.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;
use walkdir::WalkDir;

use crate::index::{self, dot_f64, rank_order, HnswParams, IndexError, IndexKind, VectorIndex};
use crate::model::ItemId;
use crate::projection::{self, ProjectionError, ProjectionResult};
use crate::store::{DatasetStore, StoreError, INDEX_DIR, PROJECTION_DIR, PYRAMID_DIR, STORE_INFO};
use crate::tiling::{self, persist, TilePyramid, TilingConfig, TilingError};
use crate::validate::{validate_pyramid, Violation};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// A prerequisite stage has not been run.
    #[error("missing stage input: {0}")]
    MissingStage(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn open_store(root: &Path) -> Result<DatasetStore, PipelineError> {
    match DatasetStore::open(root) {
        Err(StoreError::NotAStore(p)) => Err(PipelineError::MissingStage(format!(
            "{} is not an ingested store (run ingest first)",
            p.display()
        ))),
        other => Ok(other?),
    }
}

pub enum ProjectionSource<'a> {
    Pca,
    External(&'a Path),
}

pub fn project_store(root: &Path, source: ProjectionSource<'_>) -> Result<ProjectionResult, PipelineError> {
    let store = open_store(root)?;
    let result = match source {
        ProjectionSource::Pca => projection::pca_project(&store)?,
        ProjectionSource::External(path) => projection::load_external_coords(path, &store)?,
    };
    projection::save(root, &result)?;
    Ok(result)
}

/// Builds and saves the pyramid from the stored projection.
pub fn tile_store(root: &Path, cfg: &TilingConfig) -> Result<TilePyramid, PipelineError> {
    let store = open_store(root)?;
    let proj = store
        .projection()
        .ok_or_else(|| PipelineError::MissingStage("no projection in store (run project first)".into()))?;
    let mut pyramid = tiling::build_pyramid(&proj.points, cfg)?;
    let m = &mut pyramid.manifest;
    m.dataset_name = store.name().to_string();
    m.dimension = store.dimension() as u32;
    m.projection_method = proj.method;
    m.bounds_raw = proj.raw_bounds;
    persist::save(root, &pyramid)?;
    Ok(pyramid)
}

pub fn index_store(root: &Path, kind: IndexKind, params: &HnswParams) -> Result<VectorIndex, PipelineError> {
    let store = open_store(root)?;
    let idx = index::build_index(&store, kind, params)?;
    index::save(root, &idx)?;
    Ok(idx)
}

#[derive(Debug, Default)]
pub struct ValidationReport {
    pub pyramid: Vec<Violation>,
    /// Manifest, projection and index findings.
    pub other: Vec<String>,
    pub tiles_checked: usize,
    pub index_queries: usize,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.pyramid.is_empty() && self.other.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.pyramid
            .iter()
            .map(|v| v.to_string())
            .chain(self.other.iter().cloned())
            .collect()
    }
}

/// Evenly spaced sample of up to `count` ids.
fn sample_ids(n: usize, count: usize) -> Vec<usize> {
    let count = count.min(n);
    (0..count).map(|i| i * n / count).collect()
}

fn oracle_top(store: &DatasetStore, q: &[f32], n: usize) -> Vec<ItemId> {
    let norm = q.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    let q: Vec<f64> = q.iter().map(|&v| v as f64 / norm).collect();
    let m = store.normalized();
    let mut all: Vec<(f64, ItemId)> = (0..m.rows).map(|i| (dot_f64(m.row(i), &q), ItemId(i as u64))).collect();
    all.sort_by(rank_order);
    all.truncate(n);
    all.into_iter().map(|(_, id)| id).collect()
}

/// Full invariant check of a store's pyramid, plus oracle spot checks of the
/// index when one has been built.
pub fn validate_store(root: &Path, spot_checks: usize) -> Result<ValidationReport, PipelineError> {
    let store = open_store(root)?;
    let proj = store
        .projection()
        .ok_or_else(|| PipelineError::MissingStage("no projection in store (run project first)".into()))?;
    if !root.join(PYRAMID_DIR).join(persist::MANIFEST_FILE).is_file() {
        return Err(PipelineError::MissingStage(
            "no pyramid in store (run tile first)".into(),
        ));
    }
    let mut report = ValidationReport::default();
    let pyramid = match persist::load(root) {
        Ok(p) => p,
        Err(e) => {
            report.other.push(format!("pyramid unreadable: {e}"));
            return Ok(report);
        }
    };
    report.tiles_checked = pyramid.tiles().count();
    report.pyramid = validate_pyramid(&pyramid, &proj.points);
    let m = &pyramid.manifest;
    if m.dataset_name != store.name() {
        report.other.push(format!(
            "manifest names dataset {:?}, store is {:?}",
            m.dataset_name,
            store.name()
        ));
    }
    if m.dimension as usize != store.dimension() {
        report.other.push(format!(
            "manifest dimension {} but store has {}",
            m.dimension,
            store.dimension()
        ));
    }
    if m.projection_method != proj.method || m.bounds_raw != proj.raw_bounds {
        report
            .other
            .push("manifest projection fields disagree with the stored projection".into());
    }

    if index::has_index(root) {
        match index::load(&store) {
            Err(e) => report.other.push(format!("index unreadable: {e}")),
            Ok(idx) => {
                let ids = sample_ids(store.len(), spot_checks);
                let mut self_hits = 0;
                for &i in &ids {
                    let v = store.normalized().row(i);
                    let got = idx.query(v, 10)?.ids();
                    report.index_queries += 1;
                    if got.first() == Some(&ItemId(i as u64)) {
                        self_hits += 1;
                    }
                    if idx.kind() == IndexKind::Flat {
                        let want = oracle_top(&store, v, 10);
                        if got != want {
                            report
                                .other
                                .push(format!("flat index disagrees with brute force for item {i}"));
                        }
                    }
                }
                let needed = match idx.kind() {
                    IndexKind::Flat => ids.len(),
                    IndexKind::Hnsw => (ids.len() * 99).div_ceil(100),
                };
                if self_hits < needed {
                    report.other.push(format!(
                        "{} index returned the query item first for {self_hits} of {} sampled items",
                        match idx.kind() {
                            IndexKind::Flat => "flat",
                            IndexKind::Hnsw => "hnsw",
                        },
                        ids.len()
                    ));
                }
            }
        }
    }
    Ok(report)
}

/// Writes a tar archive of the atlas (store info, projection, pyramid and
/// index description). Entries are sorted with fixed ownership and
/// timestamps, so identical stores export identical bytes.
pub fn export_store(root: &Path, out: &Path) -> Result<u64, PipelineError> {
    open_store(root)?;
    if !root.join(PYRAMID_DIR).is_dir() {
        return Err(PipelineError::MissingStage(
            "no pyramid in store (run tile first)".into(),
        ));
    }
    let file = File::create(out).map_err(io_err(out))?;
    let mut builder = tar::Builder::new(io::BufWriter::new(file));
    let mut count = 0u64;
    let mut add = |path: &Path, rel: &str| -> Result<(), PipelineError> {
        let data = std::fs::read(path).map_err(io_err(path))?;
        let mut header = tar::Header::new_ustar();
        header.set_size(data.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_uid(0);
        header.set_gid(0);
        header.set_entry_type(tar::EntryType::Regular);
        builder
            .append_data(&mut header, rel, data.as_slice())
            .map_err(io_err(path))?;
        count += 1;
        Ok(())
    };
    add(&root.join(STORE_INFO), STORE_INFO)?;
    for dir in [PROJECTION_DIR, PYRAMID_DIR, INDEX_DIR] {
        let base = root.join(dir);
        if !base.is_dir() {
            continue;
        }
        for entry in WalkDir::new(&base).sort_by_file_name() {
            let entry = entry.map_err(|e| PipelineError::Io {
                path: base.clone(),
                source: e.into(),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(root).expect("under root");
            let rel = rel.to_string_lossy().replace('\\', "/");
            add(entry.path(), &rel)?;
        }
    }
    let mut w = builder.into_inner().map_err(io_err(out))?;
    w.flush().map_err(io_err(out))?;
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_is_spread_and_bounded() {
        assert_eq!(sample_ids(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(sample_ids(3, 10), vec![0, 1, 2]);
        assert!(sample_ids(0, 10).is_empty());
    }
}

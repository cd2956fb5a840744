//! Cosine-similarity top-n search over the normalized item vectors.
//!
//! Stored vectors are unit-norm, so cosine similarity is a dot product.
//! Results are ordered by descending similarity, ties by ascending id. Both
//! index kinds score their final candidates with the same f64 dot product,
//! so a hit's similarity does not depend on which index produced it.

mod flat;
mod hnsw;

use std::cmp::Ordering;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use flat::FlatIndex;
pub use hnsw::{HnswIndex, HnswParams};

use crate::format::VectorMatrix;
use crate::model::ItemId;
use crate::store::{self, DatasetStore, StoreError, INDEX_DIR};

pub const INDEX_FILE: &str = "index.json";
pub const HNSW_FILE: &str = "hnsw.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Flat,
    Hnsw,
}

impl std::str::FromStr for IndexKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "flat" => Ok(IndexKind::Flat),
            "hnsw" => Ok(IndexKind::Hnsw),
            _ => Err(format!("unknown index kind {s:?} (expected flat or hnsw)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot index an empty store")]
    Empty,
    #[error("vector dimension is zero")]
    ZeroDimension,
    #[error("query has dimension {found}, index has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("query vector is zero")]
    ZeroQuery,
    #[error("query vector has non-finite components")]
    NonFiniteQuery,
    #[error("result count must be at least 1")]
    ZeroCount,
    #[error("invalid index parameters: {0}")]
    BadParams(String),
    #[error("index does not match the store: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: ItemId,
    pub similarity: f64,
}

/// Ranked hits, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub entries: Vec<SearchHit>,
}

impl SearchResult {
    pub fn ids(&self) -> Vec<ItemId> {
        self.entries.iter().map(|h| h.id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Total order used for every ranking: higher similarity first, then lower id.
pub fn rank_order(a: &(f64, ItemId), b: &(f64, ItemId)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Keeps the best `n` of `scored` in rank order.
pub(crate) fn top_n(mut scored: Vec<(f64, ItemId)>, n: usize) -> SearchResult {
    if scored.len() > n {
        scored.select_nth_unstable_by(n - 1, rank_order);
        scored.truncate(n);
    }
    scored.sort_unstable_by(rank_order);
    SearchResult {
        entries: scored
            .into_iter()
            .map(|(s, id)| SearchHit {
                id,
                similarity: s.clamp(-1.0, 1.0),
            })
            .collect(),
    }
}

/// Validates a query and scales it to unit length.
pub fn normalize_query(q: &[f32], dim: usize) -> Result<Vec<f64>, IndexError> {
    if q.len() != dim {
        return Err(IndexError::DimensionMismatch {
            expected: dim,
            found: q.len(),
        });
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(IndexError::NonFiniteQuery);
    }
    let norm = q.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(IndexError::ZeroQuery);
    }
    Ok(q.iter().map(|&v| v as f64 / norm).collect())
}

/// Exact similarity used for final scores.
#[inline]
pub fn dot_f64(v: &[f32], q: &[f64]) -> f64 {
    v.iter().zip(q).map(|(&a, &b)| a as f64 * b).sum()
}

/// Fast f32 dot product for graph traversal.
#[inline]
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required target features were detected at runtime.
            return unsafe { simd::dot_avx2(a, b) };
        }
    }
    dot_f32_portable(a, b)
}

fn dot_f32_portable(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use std::arch::x86_64::*;

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn dot_avx2(a: &[f32], b: &[f32]) -> f32 {
        let n = a.len().min(b.len());
        let (pa, pb) = (a.as_ptr(), b.as_ptr());
        let mut acc0 = _mm256_setzero_ps();
        let mut acc1 = _mm256_setzero_ps();
        let mut i = 0;
        while i + 16 <= n {
            acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(pa.add(i)), _mm256_loadu_ps(pb.add(i)), acc0);
            acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(pa.add(i + 8)), _mm256_loadu_ps(pb.add(i + 8)), acc1);
            i += 16;
        }
        if i + 8 <= n {
            acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(pa.add(i)), _mm256_loadu_ps(pb.add(i)), acc0);
            i += 8;
        }
        let v = _mm256_add_ps(acc0, acc1);
        let lo = _mm256_castps256_ps128(v);
        let hi = _mm256_extractf128_ps(v, 1);
        let s4 = _mm_add_ps(lo, hi);
        let s2 = _mm_add_ps(s4, _mm_movehl_ps(s4, s4));
        let s1 = _mm_add_ss(s2, _mm_shuffle_ps(s2, s2, 1));
        let mut s = _mm_cvtss_f32(s1);
        while i < n {
            s += a[i] * b[i];
            i += 1;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexInfo {
    pub kind: IndexKind,
    pub dimension: u32,
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hnsw: Option<HnswParams>,
}

#[derive(Debug, Clone)]
pub enum VectorIndex {
    Flat(FlatIndex),
    Hnsw(HnswIndex),
}

impl VectorIndex {
    pub fn build(vectors: Arc<VectorMatrix>, kind: IndexKind, params: &HnswParams) -> Result<Self, IndexError> {
        Ok(match kind {
            IndexKind::Flat => VectorIndex::Flat(FlatIndex::new(vectors)?),
            IndexKind::Hnsw => VectorIndex::Hnsw(HnswIndex::build(vectors, params)?),
        })
    }

    pub fn kind(&self) -> IndexKind {
        match self {
            VectorIndex::Flat(_) => IndexKind::Flat,
            VectorIndex::Hnsw(_) => IndexKind::Hnsw,
        }
    }

    pub fn dimension(&self) -> usize {
        self.vectors().dim
    }

    pub fn len(&self) -> usize {
        self.vectors().rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vectors(&self) -> &Arc<VectorMatrix> {
        match self {
            VectorIndex::Flat(f) => f.vectors(),
            VectorIndex::Hnsw(h) => h.vectors(),
        }
    }

    /// Top `min(n, len)` items for `q`. Exact for flat, approximate for hnsw.
    pub fn query(&self, q: &[f32], n: usize) -> Result<SearchResult, IndexError> {
        match self {
            VectorIndex::Flat(f) => f.query(q, n),
            VectorIndex::Hnsw(h) => h.query(q, n),
        }
    }

    pub fn info(&self) -> IndexInfo {
        IndexInfo {
            kind: self.kind(),
            dimension: self.dimension() as u32,
            count: self.len() as u64,
            hnsw: match self {
                VectorIndex::Flat(_) => None,
                VectorIndex::Hnsw(h) => Some(*h.params()),
            },
        }
    }
}

/// Builds an index over the store's normalized vectors.
pub fn build_index(store: &DatasetStore, kind: IndexKind, params: &HnswParams) -> Result<VectorIndex, IndexError> {
    VectorIndex::build(Arc::clone(store.normalized()), kind, params)
}

/// Writes `index/index.json` (and `index/hnsw.bin` for hnsw) under `root`.
pub fn save(root: &Path, index: &VectorIndex) -> Result<(), StoreError> {
    let dir = root.join(INDEX_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
    let graph = dir.join(HNSW_FILE);
    match index {
        VectorIndex::Flat(_) => {
            if graph.exists() {
                std::fs::remove_file(&graph).map_err(|e| StoreError::io(&graph, e))?;
            }
        }
        VectorIndex::Hnsw(h) => {
            std::fs::write(&graph, h.encode_graph()).map_err(|e| StoreError::io(&graph, e))?;
        }
    }
    store::write_json(&dir.join(INDEX_FILE), &index.info())
}

pub fn has_index(root: &Path) -> bool {
    root.join(INDEX_DIR).join(INDEX_FILE).is_file()
}

/// Loads the persisted index for `store`.
pub fn load(store: &DatasetStore) -> Result<VectorIndex, IndexError> {
    let dir = store.root().join(INDEX_DIR);
    let info: IndexInfo = store::read_json(&dir.join(INDEX_FILE))?;
    if info.count as usize != store.len() || info.dimension as usize != store.dimension() {
        return Err(IndexError::Mismatch(format!(
            "index covers {} x {}, store has {} x {}",
            info.count,
            info.dimension,
            store.len(),
            store.dimension()
        )));
    }
    let vectors = Arc::clone(store.normalized());
    match info.kind {
        IndexKind::Flat => Ok(VectorIndex::Flat(FlatIndex::new(vectors)?)),
        IndexKind::Hnsw => {
            let params = info
                .hnsw
                .ok_or_else(|| IndexError::Mismatch("hnsw index without parameters".into()))?;
            let path = dir.join(HNSW_FILE);
            let bytes = std::fs::read(&path).map_err(|e| StoreError::io(&path, e))?;
            let h = HnswIndex::decode_graph(vectors, params, &bytes)
                .map_err(|msg| StoreError::corrupt(format!("{INDEX_DIR}/{HNSW_FILE}"), msg))?;
            Ok(VectorIndex::Hnsw(h))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_normalization() {
        assert!(matches!(normalize_query(&[0.0, 0.0], 2), Err(IndexError::ZeroQuery)));
        assert!(matches!(
            normalize_query(&[f32::NAN, 1.0], 2),
            Err(IndexError::NonFiniteQuery)
        ));
        assert!(matches!(
            normalize_query(&[1.0], 2),
            Err(IndexError::DimensionMismatch { expected: 2, found: 1 })
        ));
        let q = normalize_query(&[3.0, 4.0], 2).unwrap();
        assert_eq!(q, vec![0.6, 0.8]);
    }

    #[test]
    fn top_n_orders_and_truncates() {
        let s = vec![(0.5, ItemId(3)), (0.9, ItemId(1)), (0.5, ItemId(0)), (-0.2, ItemId(2))];
        let r = top_n(s.clone(), 3);
        assert_eq!(r.ids(), vec![ItemId(1), ItemId(0), ItemId(3)]);
        assert_eq!(top_n(s, 10).len(), 4);
    }

    #[test]
    fn dot_variants_agree() {
        let a: Vec<f32> = (0..37).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..37).map(|i| (i as f32 * 0.11).cos()).collect();
        let b64: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        assert!((dot_f32(&a, &b) as f64 - dot_f64(&a, &b64)).abs() < 1e-5);
        assert!((dot_f32_portable(&a, &b) as f64 - dot_f64(&a, &b64)).abs() < 1e-5);
    }

    #[test]
    fn kind_parse() {
        assert_eq!("flat".parse::<IndexKind>().unwrap(), IndexKind::Flat);
        assert_eq!("hnsw".parse::<IndexKind>().unwrap(), IndexKind::Hnsw);
        assert!("lsh".parse::<IndexKind>().is_err());
    }
}

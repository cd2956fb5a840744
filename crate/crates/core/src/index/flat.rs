use std::sync::Arc;

use rayon::prelude::*;

use super::{dot_f64, normalize_query, top_n, IndexError, SearchResult};
use crate::format::VectorMatrix;
use crate::model::ItemId;

/// Exhaustive scan over the normalized matrix.
#[derive(Debug, Clone)]
pub struct FlatIndex {
    vectors: Arc<VectorMatrix>,
}

impl FlatIndex {
    pub fn new(vectors: Arc<VectorMatrix>) -> Result<Self, IndexError> {
        if vectors.rows == 0 {
            return Err(IndexError::Empty);
        }
        if vectors.dim == 0 {
            return Err(IndexError::ZeroDimension);
        }
        Ok(FlatIndex { vectors })
    }

    pub fn vectors(&self) -> &Arc<VectorMatrix> {
        &self.vectors
    }

    pub fn query(&self, q: &[f32], n: usize) -> Result<SearchResult, IndexError> {
        if n == 0 {
            return Err(IndexError::ZeroCount);
        }
        let q = normalize_query(q, self.vectors.dim)?;
        let scored: Vec<(f64, ItemId)> = self
            .vectors
            .data
            .par_chunks_exact(self.vectors.dim)
            .enumerate()
            .map(|(i, v)| (dot_f64(v, &q), ItemId(i as u64)))
            .collect();
        Ok(top_n(scored, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows(rows: &[&[f32]]) -> Arc<VectorMatrix> {
        let dim = rows[0].len();
        let mut data = Vec::new();
        for r in rows {
            let n = r.iter().map(|v| v * v).sum::<f32>().sqrt();
            data.extend(r.iter().map(|v| v / n));
        }
        Arc::new(VectorMatrix::new(rows.len(), dim, data))
    }

    #[test]
    fn singleton() {
        let idx = FlatIndex::new(unit_rows(&[&[0.0, 1.0, 0.0]])).unwrap();
        for q in [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.3, 0.3, 0.3]] {
            assert_eq!(idx.query(&q, 5).unwrap().ids(), vec![ItemId(0)]);
        }
    }

    #[test]
    fn self_similarity_is_one() {
        let m = unit_rows(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 2.0], &[0.0, 0.0, 1.0]]);
        let idx = FlatIndex::new(m.clone()).unwrap();
        for i in 0..3 {
            let r = idx.query(m.row(i), 3).unwrap();
            assert_eq!(r.entries[0].id, ItemId(i as u64));
            assert!((r.entries[0].similarity - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn orthogonal_query_orders_by_id() {
        let m = unit_rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0]]);
        let r = FlatIndex::new(m).unwrap().query(&[1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(r.ids(), vec![ItemId(0), ItemId(1), ItemId(2)]);
        assert!(r.entries.iter().all(|h| h.similarity.abs() < 1e-6));
    }

    #[test]
    fn rejects_bad_input() {
        let idx = FlatIndex::new(unit_rows(&[&[1.0, 0.0]])).unwrap();
        assert!(matches!(idx.query(&[0.0, 0.0], 1), Err(IndexError::ZeroQuery)));
        assert!(matches!(
            idx.query(&[1.0], 1),
            Err(IndexError::DimensionMismatch { .. })
        ));
        assert!(matches!(idx.query(&[1.0, 0.0], 0), Err(IndexError::ZeroCount)));
        assert!(matches!(
            FlatIndex::new(Arc::new(VectorMatrix::new(0, 2, vec![]))),
            Err(IndexError::Empty)
        ));
        assert!(matches!(
            FlatIndex::new(Arc::new(VectorMatrix::new(2, 0, vec![]))),
            Err(IndexError::ZeroDimension)
        ));
    }
}

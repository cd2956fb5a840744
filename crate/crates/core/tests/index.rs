mod support;

use std::sync::Arc;

use aeye_core::format::VectorMatrix;
use aeye_core::index::{HnswParams, IndexKind, VectorIndex};
use aeye_core::synth;
use proptest::prelude::*;
use support::oracles;

fn rows_f64(m: &VectorMatrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(|r| r.iter().map(|&x| x as f64).collect()).collect()
}

/// Collapses ids whose oracle similarity ties (within float noise) so exact
/// tie order never makes the comparison flaky.
fn sims(rows: &[Vec<f64>], q: &[f64], ids: &[u64]) -> Vec<f64> {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    ids.iter()
        .map(|&i| {
            let r = &rows[i as usize];
            r.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / (n(r) * n(q))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flat_equals_brute_force(n in 1usize..300, dim in 2usize..24, seed in any::<u64>(), top in 1usize..20) {
        let m = synth::unit_sphere(n, dim, seed);
        let rows = rows_f64(&m);
        let idx = VectorIndex::build(Arc::new(m.clone()), IndexKind::Flat, &HnswParams::default()).unwrap();
        let q = synth::unit_sphere(1, dim, seed ^ 1).data;
        let qf: Vec<f64> = q.iter().map(|&x| x as f64).collect();
        let got = idx.query(&q, top).unwrap();
        let want = oracles::top_n(&rows, &qf, top);
        prop_assert_eq!(got.len(), want.len());
        let (gs, ws) = (sims(&rows, &qf, &got.ids().iter().map(|i| i.0).collect::<Vec<_>>()), sims(&rows, &qf, &want));
        for (a, b) in gs.iter().zip(&ws) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for (h, s) in got.entries.iter().zip(&gs) {
            prop_assert!((h.similarity - s).abs() < 1e-6);
        }
    }

    #[test]
    fn query_scale_does_not_matter(seed in any::<u64>(), scale in 1e-3f32..1e3) {
        let m = synth::unit_sphere(200, 16, seed);
        let idx = VectorIndex::build(Arc::new(m), IndexKind::Flat, &HnswParams::default()).unwrap();
        let q = synth::unit_sphere(1, 16, seed ^ 7).data;
        let scaled: Vec<f32> = q.iter().map(|x| x * scale).collect();
        prop_assert_eq!(idx.query(&q, 10).unwrap().ids(), idx.query(&scaled, 10).unwrap().ids());
    }
}

#[test]
fn hnsw_recall_on_clustered_data() {
    let raw = synth::gaussian_mixture(3000, 32, 30, 1.0, 3);
    let m = aeye_core::ingest::normalize_rows(&raw).unwrap();
    let rows = rows_f64(&m);
    let idx = VectorIndex::build(Arc::new(m), IndexKind::Hnsw, &HnswParams::default()).unwrap();
    let mut hits = 0;
    for q in 0..200u64 {
        let qv = synth::unit_sphere(1, 32, 1000 + q).data;
        let qf: Vec<f64> = qv.iter().map(|&x| x as f64).collect();
        let want = oracles::top_n(&rows, &qf, 10);
        hits += idx
            .query(&qv, 10)
            .unwrap()
            .ids()
            .iter()
            .filter(|i| want.contains(&i.0))
            .count();
    }
    let recall = hits as f64 / 2000.0;
    assert!(recall >= 0.95, "recall {recall}");
}

mod support;

use aeye_core::format::VectorMatrix;
use aeye_core::projection::principal_axes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles;

fn anisotropic(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|c| rng.random_range(-1.0..1.0) * (d - c) as f64).collect())
        .collect()
}

fn matrix(rows: &[Vec<f64>]) -> VectorMatrix {
    VectorMatrix::new(
        rows.len(),
        rows[0].len(),
        rows.iter().flatten().map(|&x| x as f32).collect(),
    )
}

fn align(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().abs()
}

#[test]
fn axes_match_power_iteration() {
    for seed in 0..5 {
        let rows = anisotropic(400, 12, seed);
        // the oracle sees exactly the f32 values the implementation sees
        let rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| x as f32 as f64).collect())
            .collect();
        let pa = principal_axes(&matrix(&rows)).unwrap();
        let (vecs, vals) = oracles::power_pca(&rows, 3000);
        for i in 0..2 {
            assert!(align(&pa.axes[i], &vecs[i]) > 1.0 - 1e-6, "axis {i} seed {seed}");
            assert!((pa.eigenvalues[i] - vals[i]).abs() <= 1e-6 * vals[0]);
        }
    }
}

#[test]
fn rotation_preserves_pairwise_layout() {
    // rotate in a random plane; 2-D pairwise distances must not change
    let rows = anisotropic(300, 6, 11);
    let (i, j, t) = (0usize, 3usize, 0.7f64);
    let rotated: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mut r = r.clone();
            let (a, b) = (r[i], r[j]);
            r[i] = a * t.cos() - b * t.sin();
            r[j] = a * t.sin() + b * t.cos();
            r
        })
        .collect();
    let a = aeye_core::projection::pca_coordinates(&matrix(&rows)).unwrap().0;
    let b = aeye_core::projection::pca_coordinates(&matrix(&rotated)).unwrap().0;
    let dist = |c: &[[f64; 2]], p: usize, q: usize| ((c[p][0] - c[q][0]).powi(2) + (c[p][1] - c[q][1]).powi(2)).sqrt();
    for p in (0..300).step_by(7) {
        for q in (1..300).step_by(13) {
            assert!((dist(&a, p, q) - dist(&b, p, q)).abs() < 1e-3 * (1.0 + dist(&a, p, q)));
        }
    }
}

//! Seeded synthetic datasets for tests, demos and benchmarks.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::format::{self, FormatError, VectorMatrix};
use crate::model::ProjectedPoint;

fn gaussian_row(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

fn unit(v: &mut [f32]) {
    let n = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    }
}

/// `n` vectors uniform on the unit sphere.
pub fn unit_sphere(n: usize, dim: usize, seed: u64) -> VectorMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let mut v = gaussian_row(&mut rng, dim);
        unit(&mut v);
        data.extend(v);
    }
    VectorMatrix::new(n, dim, data)
}

/// Clustered vectors: `clusters` Gaussian centers with isotropic noise of
/// standard deviation `spread` relative to the center norm. Not normalized.
pub fn gaussian_mixture(n: usize, dim: usize, clusters: usize, spread: f32, seed: u64) -> VectorMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..clusters.max(1))
        .map(|_| {
            let mut c = gaussian_row(&mut rng, dim);
            unit(&mut c);
            c
        })
        .collect();
    let scale = spread / (dim as f32).sqrt();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = &centers[rng.random_range(0..centers.len())];
        data.extend(c.iter().map(|&x| x + scale * rng.sample::<f32, _>(StandardNormal)));
    }
    VectorMatrix::new(n, dim, data)
}

/// Points uniform in the unit square.
pub fn uniform_points(n: usize, seed: u64) -> Vec<ProjectedPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| ProjectedPoint::new(i, rng.random::<f32>(), rng.random::<f32>()))
        .collect()
}

/// Points from a mixture of 2-D Gaussian blobs, clamped into the unit square.
pub fn clustered_points(n: usize, blobs: usize, seed: u64) -> Vec<ProjectedPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<(f32, f32, f32)> = (0..blobs.max(1))
        .map(|_| {
            (
                rng.random_range(0.1f32..0.9),
                rng.random_range(0.1f32..0.9),
                rng.random_range(0.005f32..0.08),
            )
        })
        .collect();
    (0..n)
        .map(|i| {
            let (cx, cy, s) = centers[rng.random_range(0..centers.len())];
            let x = cx + s * rng.sample::<f32, _>(StandardNormal);
            let y = cy + s * rng.sample::<f32, _>(StandardNormal);
            ProjectedPoint::new(i, x.clamp(0.0, 1.0), y.clamp(0.0, 1.0))
        })
        .collect()
}

/// Input files for `ingest`.
#[derive(Debug, Clone)]
pub struct InputFiles {
    pub vectors: PathBuf,
    pub metadata: PathBuf,
    pub captions: Option<PathBuf>,
}

/// Writes `vectors.aev`, `meta.tsv` and (optionally) `captions.tsv` into
/// `dir`. Every item gets `filename:item<i>.jpg` and a label; every other item
/// gets a caption.
pub fn write_inputs(dir: &Path, m: &VectorMatrix, with_captions: bool) -> Result<InputFiles, FormatError> {
    std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    let vectors = dir.join("vectors.aev");
    format::write_vectors(&vectors, m)?;
    let metadata = dir.join("meta.tsv");
    let text: String = (0..m.rows)
        .map(|i| format!("filename:item{i}.jpg\tlabel:group{}\n", i % 7))
        .collect();
    std::fs::write(&metadata, text).map_err(|e| FormatError::io(&metadata, e))?;
    let captions = if with_captions {
        let path = dir.join("captions.tsv");
        let text: String = (0..m.rows)
            .filter(|i| i % 2 == 0)
            .map(|i| format!("{i}\ta picture of item {i}\n"))
            .collect();
        std::fs::write(&path, text).map_err(|e| FormatError::io(&path, e))?;
        Some(path)
    } else {
        None
    };
    Ok(InputFiles {
        vectors,
        metadata,
        captions,
    })
}

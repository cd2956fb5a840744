//! 2D layout of the items: built-in PCA or externally computed coordinates,
//! followed by aspect-preserving normalization into the unit square.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{self, FormatError, VectorMatrix};
use crate::model::{Bounds, ItemId, ProjectedPoint, ProjectionMethod};
use crate::store::{self, DatasetStore, StoreError, PROJECTION_DIR};

/// Margin kept free on each side of the unit square.
pub const MARGIN: f64 = 0.01;

/// Second eigenvalue at or below this fraction of the first counts as rank 1.
pub const RANK_TOLERANCE: f64 = 1e-6;

const ROW_CHUNK: usize = 2048;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("projection needs at least 2 items and 2 dimensions (got n={n}, D={dim})")]
    TooSmall { n: usize, dim: usize },
    #[error("coordinate file has {found} points, store has {expected} items")]
    CountMismatch { expected: usize, found: usize },
    #[error("non-finite coordinate at row {row}")]
    NonFinite { row: usize },
    #[error("no points to normalize")]
    Empty,
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub method: ProjectionMethod,
    pub raw_bounds: Bounds,
    /// 2 normally; 1 when the data is collinear (y = 0), 0 when every vector
    /// is identical.
    pub rank: u8,
    pub points: Vec<ProjectedPoint>,
}

impl ProjectionResult {
    pub fn is_degenerate(&self) -> bool {
        self.rank < 2
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProjectionInfo {
    method: ProjectionMethod,
    raw_bounds: Bounds,
    rank: u8,
    item_count: u64,
}

/// Maps raw coordinates into `[MARGIN, 1 - MARGIN]^2` with one uniform scale
/// factor: the longer axis spans exactly `1 - 2*MARGIN`, the other axis is
/// centered. Zero-extent axes collapse to 0.5.
pub fn normalize_coords(raw: &[[f64; 2]]) -> Result<(Vec<[f64; 2]>, Bounds), ProjectionError> {
    if raw.is_empty() {
        return Err(ProjectionError::Empty);
    }
    if let Some(row) = raw.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(ProjectionError::NonFinite { row });
    }
    let b = bounds_of(raw);
    let extent = (b.max_x - b.min_x).max(b.max_y - b.min_y);
    let cx = 0.5 * (b.min_x + b.max_x);
    let cy = 0.5 * (b.min_y + b.max_y);
    let scale = if extent > 0.0 {
        (1.0 - 2.0 * MARGIN) / extent
    } else {
        0.0
    };
    let out = raw
        .iter()
        .map(|&[x, y]| {
            [
                (0.5 + (x - cx) * scale).clamp(0.0, 1.0),
                (0.5 + (y - cy) * scale).clamp(0.0, 1.0),
            ]
        })
        .collect();
    Ok((out, b))
}

fn bounds_of(raw: &[[f64; 2]]) -> Bounds {
    raw.iter().fold(
        Bounds {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        },
        |b, &[x, y]| Bounds {
            min_x: b.min_x.min(x),
            min_y: b.min_y.min(y),
            max_x: b.max_x.max(x),
            max_y: b.max_y.max(y),
        },
    )
}

/// Normalizes raw coordinates and rounds them to the `f32` precision used by
/// every later stage.
pub fn from_raw_coords(
    raw: &[[f64; 2]],
    method: ProjectionMethod,
    rank: u8,
) -> Result<ProjectionResult, ProjectionError> {
    let (norm, raw_bounds) = normalize_coords(raw)?;
    let points = norm
        .iter()
        .enumerate()
        .map(|(i, &[x, y])| ProjectedPoint::new(ItemId(i as u64), x as f32, y as f32))
        .collect();
    Ok(ProjectionResult {
        method,
        raw_bounds,
        rank,
        points,
    })
}

/// Top-2 principal axes of a mean-centered matrix.
#[derive(Debug, Clone)]
pub struct PrincipalAxes {
    pub mean: Vec<f64>,
    pub axes: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
    pub rank: u8,
}

/// Covariance eigen-decomposition. Each axis is sign-fixed so that its
/// largest-magnitude loading is positive (first index wins ties).
pub fn principal_axes(m: &VectorMatrix) -> Result<PrincipalAxes, ProjectionError> {
    let (n, d) = (m.rows, m.dim);
    if n < 2 || d < 2 {
        return Err(ProjectionError::TooSmall { n, dim: d });
    }

    let mut mean = vec![0.0f64; d];
    for row in m.iter_rows() {
        for (acc, &v) in mean.iter_mut().zip(row) {
            *acc += v as f64;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);

    let first = m.row(0);
    if m.iter_rows().all(|r| r == first) {
        return Ok(PrincipalAxes {
            mean,
            axes: [vec![0.0; d], vec![0.0; d]],
            eigenvalues: [0.0, 0.0],
            rank: 0,
        });
    }

    let cov = m
        .data
        .par_chunks(ROW_CHUNK * d)
        .map(|chunk| {
            let rows = chunk.len() / d;
            let block = DMatrix::<f64>::from_fn(rows, d, |r, c| chunk[r * d + c] as f64 - mean[c]);
            block.tr_mul(&block)
        })
        .reduce(|| DMatrix::<f64>::zeros(d, d), |a, b| a + b)
        / n as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let l1 = eig.eigenvalues[order[0]].max(0.0);
    let l2 = eig.eigenvalues[order[1]].max(0.0);

    let axis = |k: usize| -> Vec<f64> {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold(
                (0usize, 0.0f64),
                |best, (i, &x)| if x.abs() > best.1 { (i, x.abs()) } else { best },
            )
            .0;
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };

    let rank = if l1 <= 0.0 {
        0
    } else if l2 <= RANK_TOLERANCE * l1 {
        1
    } else {
        2
    };
    let axes = match rank {
        0 => [vec![0.0; d], vec![0.0; d]],
        1 => [axis(0), vec![0.0; d]],
        _ => [axis(0), axis(1)],
    };
    Ok(PrincipalAxes {
        mean,
        axes,
        eigenvalues: [l1, l2],
        rank,
    })
}

/// Raw PCA coordinates of every row.
pub fn pca_coordinates(m: &VectorMatrix) -> Result<(Vec<[f64; 2]>, u8), ProjectionError> {
    let pa = principal_axes(m)?;
    let coords = m
        .data
        .par_chunks(m.dim)
        .map(|row| {
            let mut s = [0.0f64; 2];
            for (c, &v) in row.iter().enumerate() {
                let centered = v as f64 - pa.mean[c];
                s[0] += centered * pa.axes[0][c];
                s[1] += centered * pa.axes[1][c];
            }
            s
        })
        .collect();
    Ok((coords, pa.rank))
}

pub fn pca_project_matrix(m: &VectorMatrix) -> Result<ProjectionResult, ProjectionError> {
    let (raw, rank) = pca_coordinates(m)?;
    from_raw_coords(&raw, ProjectionMethod::Pca, rank)
}

/// PCA over the store's ingested vectors.
pub fn pca_project(store: &DatasetStore) -> Result<ProjectionResult, ProjectionError> {
    pca_project_matrix(&store.raw_vectors()?)
}

/// Adopts externally computed coordinates (`AEC1`) verbatim as raw positions.
pub fn load_external_coords(coords_file: &Path, store: &DatasetStore) -> Result<ProjectionResult, ProjectionError> {
    let pts = format::read_coords(coords_file)?;
    external_from_points(&pts, store.len())
}

pub fn external_from_points(pts: &[[f32; 2]], expected: usize) -> Result<ProjectionResult, ProjectionError> {
    if pts.len() != expected {
        return Err(ProjectionError::CountMismatch {
            expected,
            found: pts.len(),
        });
    }
    if let Some(row) = pts.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(ProjectionError::NonFinite { row });
    }
    let raw: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] as f64, p[1] as f64]).collect();
    from_raw_coords(&raw, ProjectionMethod::External, 2)
}

pub fn save(root: &Path, result: &ProjectionResult) -> Result<(), StoreError> {
    let dir = root.join(PROJECTION_DIR);
    fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
    let pts: Vec<[f32; 2]> = result.points.iter().map(|p| [p.x, p.y]).collect();
    format::write_coords(&dir.join("points.aec"), &pts)?;
    store::write_json(
        &dir.join("projection.json"),
        &ProjectionInfo {
            method: result.method,
            raw_bounds: result.raw_bounds,
            rank: result.rank,
            item_count: result.points.len() as u64,
        },
    )
}

pub fn load(root: &Path) -> Result<Option<ProjectionResult>, StoreError> {
    let dir = root.join(PROJECTION_DIR);
    let info_path = dir.join("projection.json");
    if !info_path.is_file() {
        return Ok(None);
    }
    let info: ProjectionInfo = store::read_json(&info_path)?;
    let pts = format::read_coords(&dir.join("points.aec"))?;
    if pts.len() as u64 != info.item_count {
        return Err(StoreError::corrupt(
            "projection/points.aec",
            "point count differs from projection.json",
        ));
    }
    let points = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
                return Err(StoreError::corrupt(
                    "projection/points.aec",
                    format!("point {i} outside the unit square"),
                ));
            }
            Ok(ProjectedPoint::new(ItemId(i as u64), p[0], p[1]))
        })
        .collect::<Result<_, _>>()?;
    Ok(Some(ProjectionResult {
        method: info.method,
        raw_bounds: info.raw_bounds,
        rank: info.rank,
        points,
    }))
}

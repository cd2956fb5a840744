//! Layered tile pyramid of representatives.
//!
//! Layers are processed top-down. For every non-empty tile of layer `l < depth`
//! the representatives chosen on earlier layers that fall inside the tile are
//! pinned as fixed centroids, k-means fills the remaining `k - |inherited|`
//! slots, and the point nearest to each free center becomes a new
//! representative. The final layer (`depth`) shows every item.
//!
//! Tiles within a layer are independent and run in parallel; each tile draws
//! its k-means seeding from an RNG keyed by `(seed, tile)`, so the result does
//! not depend on scheduling.

pub mod depth;
pub mod kmeans;
pub mod persist;
pub mod select;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::debug;

pub use depth::{compute_depth, DepthInfo};
pub use kmeans::{constrained_kmeans, constrained_kmeans_with_rng, KMeansOutcome, Point2};
pub use select::select_representatives;

use crate::model::{
    tile_for_point, AtlasManifest, Bounds, ItemId, ProjectedPoint, ProjectionMethod, Representative, Tile, TileKey,
    MAX_LAYER,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TilingConfig {
    /// Representatives per tile.
    pub k: usize,
    /// Lloyd iteration cap.
    pub max_iterations: usize,
    /// Stop once no free center moves farther than this (unit-square units).
    pub convergence_eps: f64,
    pub rng_seed: u64,
    pub max_depth_cap: u32,
}

impl Default for TilingConfig {
    fn default() -> Self {
        TilingConfig {
            k: 25,
            max_iterations: 50,
            convergence_eps: 1e-6,
            rng_seed: 7,
            max_depth_cap: 16,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TilingError {
    #[error("no points to tile")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("max depth cap must be within 1..={MAX_LAYER}, got {0}")]
    BadDepthCap(u32),
    #[error("point at position {index} has id {id}; ids must be dense and ordered")]
    NonDenseIds { index: usize, id: ItemId },
    #[error("point {0} lies outside the unit square")]
    OutOfUnitSquare(ItemId),
}

/// Built pyramid: `layers[l]` maps every non-empty tile of layer `l` to its
/// full representative set.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePyramid {
    pub manifest: AtlasManifest,
    pub layers: Vec<BTreeMap<TileKey, Tile>>,
}

impl TilePyramid {
    pub fn depth(&self) -> u32 {
        self.manifest.depth
    }

    pub fn tile(&self, key: TileKey) -> Option<&Tile> {
        self.layers.get(key.layer as usize)?.get(&key)
    }

    pub fn tiles(&self) -> impl Iterator<Item = &Tile> {
        self.layers.iter().flat_map(|l| l.values())
    }

    /// SHA-256 over the manifest and every tile record in key order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.manifest).expect("manifest serializes"));
        for tile in self.tiles() {
            h.update(tile.key.layer.to_le_bytes());
            h.update(tile.key.ix.to_le_bytes());
            h.update(tile.key.iy.to_le_bytes());
            h.update(crate::format::encode_tile(tile));
        }
        crate::store::hex(&h.finalize())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-tile RNG seed.
pub fn tile_seed(seed: u64, key: TileKey) -> u64 {
    let mut s = splitmix64(seed);
    s = splitmix64(s ^ u64::from(key.layer));
    s = splitmix64(s ^ u64::from(key.ix));
    splitmix64(s ^ u64::from(key.iy))
}

fn validate_input(points: &[ProjectedPoint], cfg: &TilingConfig) -> Result<(), TilingError> {
    if points.is_empty() {
        return Err(TilingError::Empty);
    }
    if cfg.k == 0 {
        return Err(TilingError::ZeroK);
    }
    if cfg.max_depth_cap == 0 || cfg.max_depth_cap > MAX_LAYER {
        return Err(TilingError::BadDepthCap(cfg.max_depth_cap));
    }
    for (i, p) in points.iter().enumerate() {
        if p.id.index() != i {
            return Err(TilingError::NonDenseIds { index: i, id: p.id });
        }
        if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
            return Err(TilingError::OutOfUnitSquare(p.id));
        }
    }
    Ok(())
}

/// Groups point indices by their tile at `layer`, in key order.
fn bucket_by_tile(points: &[ProjectedPoint], layer: u32) -> Vec<(TileKey, Vec<u32>)> {
    let mut keyed: Vec<(TileKey, u32)> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| (tile_for_point(p, layer), i as u32))
        .collect();
    keyed.par_sort_unstable();
    let mut out: Vec<(TileKey, Vec<u32>)> = Vec::new();
    for (key, i) in keyed {
        match out.last_mut() {
            Some((k, v)) if *k == key => v.push(i),
            _ => out.push((key, vec![i])),
        }
    }
    out
}

/// New representatives for one tile (inherited ones excluded).
fn tile_new_representatives(
    key: TileKey,
    members: &[u32],
    points: &[ProjectedPoint],
    introduced: &[Option<u16>],
    cfg: &TilingConfig,
) -> Vec<u32> {
    let fresh = || members.iter().copied().filter(|&i| introduced[i as usize].is_none());
    if members.len() <= cfg.k {
        return fresh().collect();
    }
    let inherited: Vec<ItemId> = members
        .iter()
        .filter(|&&i| introduced[i as usize].is_some())
        .map(|&i| ItemId(i as u64))
        .collect();
    debug_assert!(inherited.len() <= cfg.k, "inheritance bound violated in {key}");
    if inherited.len() >= cfg.k {
        return Vec::new();
    }

    let tile_points: Vec<ProjectedPoint> = members.iter().map(|&i| points[i as usize]).collect();
    let positions: Vec<Point2> = tile_points.iter().map(|p| p.pos()).collect();
    let fixed: Vec<Point2> = inherited.iter().map(|id| points[id.index()].pos()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(tile_seed(cfg.rng_seed, key));
    let outcome = constrained_kmeans_with_rng(&positions, &fixed, cfg.k, cfg, &mut rng);
    debug!(%key, points = members.len(), fixed = fixed.len(), iterations = outcome.iterations, "clustered tile");

    select_representatives(&tile_points, &outcome.free_centers, &inherited)
        .into_iter()
        .map(|id| id.0 as u32)
        .filter(|&i| introduced[i as usize].is_none())
        .collect()
}

fn make_tile(key: TileKey, members: &[u32], points: &[ProjectedPoint], introduced: &[Option<u16>]) -> Tile {
    let mut representatives: Vec<Representative> = members
        .iter()
        .filter_map(|&i| {
            let at = introduced[i as usize]?;
            let p = points[i as usize];
            Some(Representative {
                id: p.id,
                x: p.x,
                y: p.y,
                introduced_at_layer: at,
            })
        })
        .collect();
    representatives.sort_by_key(|r| (r.introduced_at_layer, r.id));
    Tile { key, representatives }
}

/// Builds the full pyramid for `points` (ids must be `0..n` in order).
///
/// The returned manifest carries the tiling parameters and layer statistics;
/// dataset-level fields (`dataset_name`, `dimension`, projection) are left at
/// neutral values for the caller to fill in.
pub fn build_pyramid(points: &[ProjectedPoint], cfg: &TilingConfig) -> Result<TilePyramid, TilingError> {
    validate_input(points, cfg)?;
    let DepthInfo { depth, capped } = compute_depth(points, cfg);
    let n = points.len();
    let mut introduced: Vec<Option<u16>> = vec![None; n];
    let mut layers = Vec::with_capacity(depth as usize + 1);

    for layer in 0..depth {
        let buckets = bucket_by_tile(points, layer);
        let new_reps: Vec<Vec<u32>> = buckets
            .par_iter()
            .map(|(key, members)| tile_new_representatives(*key, members, points, &introduced, cfg))
            .collect();
        for i in new_reps.into_iter().flatten() {
            introduced[i as usize] = Some(layer as u16);
        }
        let tiles: BTreeMap<TileKey, Tile> = buckets
            .par_iter()
            .map(|(key, members)| (*key, make_tile(*key, members, points, &introduced)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        layers.push(tiles);
    }

    // final layer: every item, annotated with the layer it first appeared on
    for slot in introduced.iter_mut() {
        slot.get_or_insert(depth as u16);
    }
    let last: BTreeMap<TileKey, Tile> = bucket_by_tile(points, depth)
        .par_iter()
        .map(|(key, members)| (*key, make_tile(*key, members, points, &introduced)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    layers.push(last);

    let manifest = AtlasManifest {
        dataset_name: String::new(),
        item_count: n as u64,
        k: cfg.k as u32,
        depth,
        dimension: 0,
        projection_method: ProjectionMethod::External,
        bounds_raw: Bounds {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 1.0,
            max_y: 1.0,
        },
        per_layer_nonempty_tile_counts: layers.iter().map(|l| l.len() as u64).collect(),
        depth_capped: capped,
        seed: cfg.rng_seed,
    };
    Ok(TilePyramid { manifest, layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_points(n: usize) -> Vec<ProjectedPoint> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                ProjectedPoint::new(
                    i,
                    (t * 0.754_877_666).fract() as f32,
                    (t * 0.569_840_291).fract() as f32,
                )
            })
            .collect()
    }

    #[test]
    fn small_dataset_single_tile() {
        let pts = grid_points(5);
        let cfg = TilingConfig {
            k: 10,
            ..TilingConfig::default()
        };
        let p = build_pyramid(&pts, &cfg).unwrap();
        assert_eq!(p.depth(), 0);
        assert_eq!(p.layers.len(), 1);
        let t = p.tile(TileKey::ROOT).unwrap();
        assert_eq!(t.representatives.len(), 5);
        assert!(t.representatives.iter().all(|r| r.introduced_at_layer == 0));
        assert_eq!(p.manifest.per_layer_nonempty_tile_counts, vec![1]);
    }

    #[test]
    fn caps_and_nesting_hold() {
        let pts = grid_points(600);
        let cfg = TilingConfig {
            k: 12,
            rng_seed: 3,
            ..TilingConfig::default()
        };
        let p = build_pyramid(&pts, &cfg).unwrap();
        assert!(p.depth() >= 2);
        for (l, layer) in p.layers.iter().enumerate() {
            for t in layer.values() {
                if (l as u32) < p.depth() {
                    assert!(
                        t.representatives.len() <= 12,
                        "tile {} has {}",
                        t.key,
                        t.representatives.len()
                    );
                }
                assert!(!t.representatives.is_empty());
            }
        }
        let ids_at = |l: usize| -> std::collections::BTreeSet<ItemId> {
            p.layers[l]
                .values()
                .flat_map(|t| t.representatives.iter().map(|r| r.id))
                .collect()
        };
        for l in 1..p.layers.len() {
            assert!(ids_at(l - 1).is_subset(&ids_at(l)));
        }
        assert_eq!(ids_at(p.depth() as usize).len(), 600);
    }

    #[test]
    fn deterministic() {
        let pts = grid_points(400);
        let cfg = TilingConfig::default();
        assert_eq!(
            build_pyramid(&pts, &cfg).unwrap().digest(),
            build_pyramid(&pts, &cfg).unwrap().digest()
        );
        let other = TilingConfig {
            rng_seed: 99,
            ..cfg.clone()
        };
        assert_ne!(
            build_pyramid(&pts, &cfg).unwrap().digest(),
            build_pyramid(&pts, &other).unwrap().digest()
        );
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = TilingConfig::default();
        assert_eq!(build_pyramid(&[], &cfg), Err(TilingError::Empty));
        let bad = vec![ProjectedPoint::new(1usize, 0.5, 0.5)];
        assert!(matches!(
            build_pyramid(&bad, &cfg),
            Err(TilingError::NonDenseIds { .. })
        ));
        let out = vec![ProjectedPoint::new(0usize, 1.5, 0.5)];
        assert!(matches!(
            build_pyramid(&out, &cfg),
            Err(TilingError::OutOfUnitSquare(_))
        ));
        let zero = TilingConfig { k: 0, ..cfg };
        assert_eq!(build_pyramid(&grid_points(3), &zero), Err(TilingError::ZeroK));
    }

    #[test]
    fn coincident_points_capped() {
        let pts: Vec<_> = (0..4).map(|i| ProjectedPoint::new(i as usize, 0.25, 0.75)).collect();
        let cfg = TilingConfig {
            k: 1,
            max_depth_cap: 3,
            ..TilingConfig::default()
        };
        let p = build_pyramid(&pts, &cfg).unwrap();
        assert!(p.manifest.depth_capped);
        assert_eq!(p.depth(), 3);
        for l in 0..3 {
            assert_eq!(p.layers[l].len(), 1);
            assert_eq!(p.layers[l].values().next().unwrap().representatives.len(), 1);
        }
        assert_eq!(p.layers[3].values().next().unwrap().representatives.len(), 4);
    }
}

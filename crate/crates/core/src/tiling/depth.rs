use std::collections::HashMap;

use super::TilingConfig;
use crate::model::{tile_for_point, ProjectedPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthInfo {
    pub depth: u32,
    /// The cap was reached while some tile still held more than `k` points.
    pub capped: bool,
}

/// Largest point count of any tile at `layer`.
pub fn max_tile_occupancy(points: &[ProjectedPoint], layer: u32) -> usize {
    let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
    let mut best = 0;
    for p in points {
        let t = tile_for_point(p, layer);
        let c = counts.entry((t.ix, t.iy)).or_default();
        *c += 1;
        best = best.max(*c);
    }
    best
}

/// Smallest layer whose tiles each hold at most `k` points, capped at
/// `cfg.max_depth_cap`.
pub fn compute_depth(points: &[ProjectedPoint], cfg: &TilingConfig) -> DepthInfo {
    if points.len() <= cfg.k {
        return DepthInfo {
            depth: 0,
            capped: false,
        };
    }
    for d in 1..=cfg.max_depth_cap {
        if max_tile_occupancy(points, d) <= cfg.k {
            return DepthInfo {
                depth: d,
                capped: false,
            };
        }
    }
    DepthInfo {
        depth: cfg.max_depth_cap,
        capped: true,
    }
}

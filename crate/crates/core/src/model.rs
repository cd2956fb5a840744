//! Shared data model and quadtree tile geometry.
//!
//! Layer `l` is a regular `2^l x 2^l` grid over the unit square, so layer 0 is
//! a single tile and the tile side halves from one layer to the next. Tile
//! areas are half-open `[ix*s, (ix+1)*s) x [iy*s, (iy+1)*s)`, except that the
//! outer boundary of the unit square belongs to the last row/column.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Dense item identifier assigned in ingestion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u64);

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for ItemId {
    fn from(i: usize) -> Self {
        ItemId(i as u64)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-item metadata as an ordered key/value map (`filename`, `label`, `url`, ...).
pub type Metadata = BTreeMap<String, String>;

/// One ingested item.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: ItemId,
    pub vector: Vec<f32>,
    pub metadata: Metadata,
    pub caption: Option<String>,
}

/// Position of an item in the normalized unit square.
///
/// Coordinates are stored as `f32`, which is also the precision of the tile
/// records on disk. Every geometric decision (tile membership, clustering)
/// works on these exact values so that persisted pyramids re-validate
/// bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: ItemId,
    pub x: f32,
    pub y: f32,
}

impl ProjectedPoint {
    pub fn new(id: impl Into<ItemId>, x: f32, y: f32) -> Self {
        ProjectedPoint { id: id.into(), x, y }
    }

    #[inline]
    pub fn pos(&self) -> [f64; 2] {
        [self.x as f64, self.y as f64]
    }
}

/// Address of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileKey {
    pub layer: u32,
    pub ix: u32,
    pub iy: u32,
}

/// Highest layer for which tile indices fit the `u32` grid arithmetic.
pub const MAX_LAYER: u32 = 31;

impl TileKey {
    /// Returns `None` when the indices fall outside the `2^layer` grid.
    pub fn new(layer: u32, ix: u32, iy: u32) -> Option<Self> {
        if layer > MAX_LAYER {
            return None;
        }
        let side = grid_side(layer);
        (u64::from(ix) < side && u64::from(iy) < side).then_some(TileKey { layer, ix, iy })
    }

    pub const ROOT: TileKey = TileKey { layer: 0, ix: 0, iy: 0 };

    /// Side length of the tile in unit-square units.
    pub fn side(&self) -> f64 {
        tile_side(self.layer)
    }

    /// `(min_x, min_y, max_x, max_y)` of the tile area.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let s = self.side();
        let x0 = self.ix as f64 * s;
        let y0 = self.iy as f64 * s;
        (x0, y0, x0 + s, y0 + s)
    }

    /// The four tiles of the next layer partitioning this tile's area.
    pub fn children(&self) -> [TileKey; 4] {
        tile_children(*self)
    }

    pub fn parent(&self) -> Option<TileKey> {
        (self.layer > 0).then(|| TileKey {
            layer: self.layer - 1,
            ix: self.ix / 2,
            iy: self.iy / 2,
        })
    }

    /// Whether `(x, y)` lies in this tile's area under the half-open rule.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return false;
        }
        let (ix, iy) = grid_cell(x, y, self.layer);
        ix == self.ix && iy == self.iy
    }
}

impl fmt::Display for TileKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.layer, self.ix, self.iy)
    }
}

#[inline]
fn grid_side(layer: u32) -> u64 {
    1u64 << layer
}

#[inline]
pub fn tile_side(layer: u32) -> f64 {
    (-(layer as i32) as f64).exp2()
}

#[inline]
fn axis_cell(v: f64, side: u64) -> u32 {
    // Multiplying by a power of two is exact, so floor() is the exact cell.
    let c = (v * side as f64).floor() as u64;
    c.min(side - 1) as u32
}

#[inline]
fn grid_cell(x: f64, y: f64, layer: u32) -> (u32, u32) {
    let side = grid_side(layer);
    (axis_cell(x, side), axis_cell(y, side))
}

/// The unique tile of `layer` whose area contains `(x, y)`.
///
/// Panics if the point lies outside the closed unit square or `layer` exceeds
/// [`MAX_LAYER`].
pub fn tile_for_xy(x: f64, y: f64, layer: u32) -> TileKey {
    assert!(
        (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y),
        "point ({x}, {y}) outside the unit square"
    );
    assert!(layer <= MAX_LAYER, "layer {layer} exceeds {MAX_LAYER}");
    let (ix, iy) = grid_cell(x, y, layer);
    TileKey { layer, ix, iy }
}

/// The tile of `layer` containing `p`.
pub fn tile_for_point(p: &ProjectedPoint, layer: u32) -> TileKey {
    tile_for_xy(p.x as f64, p.y as f64, layer)
}

pub fn tile_children(t: TileKey) -> [TileKey; 4] {
    let layer = t.layer + 1;
    let (x, y) = (t.ix * 2, t.iy * 2);
    [
        TileKey { layer, ix: x, iy: y },
        TileKey {
            layer,
            ix: x + 1,
            iy: y,
        },
        TileKey {
            layer,
            ix: x,
            iy: y + 1,
        },
        TileKey {
            layer,
            ix: x + 1,
            iy: y + 1,
        },
    ]
}

/// One representative entry of a tile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub id: ItemId,
    pub x: f32,
    pub y: f32,
    pub introduced_at_layer: u16,
}

/// Content of one non-empty grid cell: every representative inside its area
/// at that layer, inherited ones included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub key: TileKey,
    pub representatives: Vec<Representative>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Pca,
    External,
}

impl fmt::Display for ProjectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectionMethod::Pca => "pca",
            ProjectionMethod::External => "external",
        })
    }
}

/// Raw (pre-normalization) bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

/// Global description of a built atlas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasManifest {
    pub dataset_name: String,
    pub item_count: u64,
    pub k: u32,
    /// Index of the all-points layer.
    pub depth: u32,
    pub dimension: u32,
    pub projection_method: ProjectionMethod,
    pub bounds_raw: Bounds,
    /// One entry per layer `0..=depth`.
    pub per_layer_nonempty_tile_counts: Vec<u64>,
    /// Set when the depth cap stopped subdivision before every final tile
    /// held at most `k` items (coincident points).
    #[serde(default)]
    pub depth_capped: bool,
    #[serde(default)]
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_tile_layer() {
        assert_eq!(tile_for_xy(0.0, 0.0, 0), TileKey::ROOT);
        assert_eq!(tile_for_xy(1.0, 1.0, 0), TileKey::ROOT);
    }

    #[test]
    fn closed_upper_boundary() {
        assert_eq!(tile_for_xy(1.0, 1.0, 2), TileKey { layer: 2, ix: 3, iy: 3 });
        assert_eq!(tile_for_xy(1.0, 0.0, 3), TileKey { layer: 3, ix: 7, iy: 0 });
    }

    #[test]
    fn hand_evaluated_cell() {
        assert_eq!(tile_for_xy(0.49, 0.51, 1), TileKey { layer: 1, ix: 0, iy: 1 });
        // interior edges belong to the upper cell
        assert_eq!(tile_for_xy(0.5, 0.25, 1), TileKey { layer: 1, ix: 1, iy: 0 });
        assert_eq!(tile_for_xy(0.25, 0.25, 2), TileKey { layer: 2, ix: 1, iy: 1 });
    }

    #[test]
    fn children_of_root() {
        let c = tile_children(TileKey::ROOT);
        let want = [(0, 0), (1, 0), (0, 1), (1, 1)];
        for (t, (ix, iy)) in c.iter().zip(want) {
            assert_eq!(*t, TileKey { layer: 1, ix, iy });
        }
    }

    #[test]
    fn children_index_doubling() {
        let c = tile_children(TileKey { layer: 1, ix: 1, iy: 0 });
        let want = [(2, 0), (3, 0), (2, 1), (3, 1)];
        for (t, (ix, iy)) in c.iter().zip(want) {
            assert_eq!(*t, TileKey { layer: 2, ix, iy });
        }
    }

    #[test]
    fn children_partition_parent_area() {
        let t = TileKey { layer: 3, ix: 5, iy: 2 };
        let (x0, y0, x1, y1) = t.bounds();
        let kids = t.children();
        let area: f64 = kids
            .iter()
            .map(|c| {
                let (a, b, cc, d) = c.bounds();
                (cc - a) * (d - b)
            })
            .sum();
        assert_eq!(area, (x1 - x0) * (y1 - y0));
        for c in kids {
            let (a, b, cc, d) = c.bounds();
            assert!(a >= x0 && b >= y0 && cc <= x1 && d <= y1);
            assert_eq!(c.parent(), Some(t));
        }
        // disjoint: the lower-left corner of each child belongs to it alone
        for c in kids {
            let (a, b, _, _) = c.bounds();
            assert_eq!(kids.iter().filter(|o| o.contains(a, b)).count(), 1);
        }
    }

    #[test]
    fn key_range_checks() {
        assert!(TileKey::new(2, 4, 0).is_none());
        assert!(TileKey::new(2, 3, 3).is_some());
        assert!(TileKey::new(0, 0, 1).is_none());
        assert!(TileKey::new(32, 0, 0).is_none());
    }

    #[test]
    #[should_panic]
    fn outside_unit_square_panics() {
        tile_for_xy(1.5, 0.0, 1);
    }

    proptest! {
        #[test]
        fn exactly_one_tile_contains_point(x in 0.0f64..=1.0, y in 0.0f64..=1.0, layer in 0u32..7) {
            let side = 1u32 << layer;
            let mut hits = 0;
            for ix in 0..side {
                for iy in 0..side {
                    if (TileKey { layer, ix, iy }).contains(x, y) {
                        hits += 1;
                    }
                }
            }
            prop_assert_eq!(hits, 1);
            prop_assert!(tile_for_xy(x, y, layer).contains(x, y));
        }

        #[test]
        fn deeper_tile_is_a_child(x in 0.0f64..=1.0, y in 0.0f64..=1.0, layer in 0u32..20) {
            let t = tile_for_xy(x, y, layer);
            let deeper = tile_for_xy(x, y, layer + 1);
            prop_assert!(t.children().contains(&deeper));
        }
    }
}

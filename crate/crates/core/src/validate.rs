//! Exhaustive pyramid checker.
//!
//! Re-derives everything from the item positions and the stored tiles alone,
//! without touching the builder's code paths: tile membership is recomputed
//! from coordinates, inheritance sets are rebuilt by brute force from the
//! union of earlier layers, and completeness is checked by counting ids.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::model::{ItemId, ProjectedPoint, TileKey};
use crate::tiling::TilePyramid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Manifest fields disagree with the stored layers.
    Manifest,
    /// Tile key outside the layer grid, or a stored tile is empty.
    BadTileKey,
    /// Representative id not in the dataset or position differs from the item.
    UnknownItem,
    /// Representative lies outside its tile's area.
    OutsideTile,
    DuplicateId,
    /// `introduced_at_layer` later than the tile's layer, or inconsistent
    /// with the layer where the id first appears.
    IntroducedLayer,
    /// More than `k` representatives in a tile above the final layer.
    TileCap,
    /// More than `k` earlier representatives inside a tile's area.
    InheritanceBound,
    /// A representative disappears on a deeper layer.
    Nesting,
    /// The final layer does not list every item exactly once.
    Completeness,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub tile: Option<TileKey>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tile {
            Some(t) => write!(f, "[{:?}] tile {t}: {}", self.kind, self.detail),
            None => write!(f, "[{:?}] {}", self.kind, self.detail),
        }
    }
}

struct Report(Vec<Violation>);

impl Report {
    fn push(&mut self, kind: ViolationKind, tile: Option<TileKey>, detail: impl Into<String>) {
        self.0.push(Violation {
            kind,
            tile,
            detail: detail.into(),
        });
    }
}

fn containing_tile(x: f32, y: f32, layer: u32) -> Option<(u32, u32)> {
    let (x, y) = (x as f64, y as f64);
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return None;
    }
    // written out independently of model::tile_for_xy
    let cells = 2f64.powi(layer as i32);
    let last = cells - 1.0;
    Some((
        (x * cells).floor().min(last) as u32,
        (y * cells).floor().min(last) as u32,
    ))
}

/// Checks every pyramid invariant. `points[i]` must be item `i`.
pub fn validate_pyramid(pyramid: &TilePyramid, points: &[ProjectedPoint]) -> Vec<Violation> {
    use ViolationKind::*;
    let mut r = Report(Vec::new());
    let m = &pyramid.manifest;
    let n = points.len();
    let k = m.k as usize;
    let depth = m.depth as usize;

    if m.item_count as usize != n {
        r.push(Manifest, None, format!("item_count {} but {n} items", m.item_count));
    }
    if pyramid.layers.len() != depth + 1 {
        r.push(
            Manifest,
            None,
            format!("depth {depth} but {} stored layers", pyramid.layers.len()),
        );
    }
    if m.per_layer_nonempty_tile_counts.len() != depth + 1 {
        r.push(
            Manifest,
            None,
            format!(
                "{} tile counts for depth {depth}",
                m.per_layer_nonempty_tile_counts.len()
            ),
        );
    }
    if m.k == 0 {
        r.push(Manifest, None, "k is zero");
    }

    // per-layer id -> (tile, introduced_at_layer)
    let mut seen: Vec<HashMap<ItemId, (TileKey, u16)>> = Vec::with_capacity(pyramid.layers.len());

    for (l, layer) in pyramid.layers.iter().enumerate() {
        if let Some(&c) = m.per_layer_nonempty_tile_counts.get(l) {
            if c as usize != layer.len() {
                r.push(
                    Manifest,
                    None,
                    format!("layer {l}: manifest lists {c} tiles, {} stored", layer.len()),
                );
            }
        }
        let mut ids: HashMap<ItemId, (TileKey, u16)> = HashMap::new();
        for (&key, tile) in layer {
            if key != tile.key || key.layer as usize != l || TileKey::new(key.layer, key.ix, key.iy).is_none() {
                r.push(BadTileKey, Some(key), "key does not match its layer grid");
                continue;
            }
            if tile.representatives.is_empty() {
                r.push(BadTileKey, Some(key), "empty tile stored");
            }
            if l < depth && tile.representatives.len() > k {
                r.push(
                    TileCap,
                    Some(key),
                    format!("{} representatives, k = {k}", tile.representatives.len()),
                );
            }
            if l == depth && !m.depth_capped && tile.representatives.len() > k {
                r.push(
                    TileCap,
                    Some(key),
                    format!("final tile holds {} > k without depth cap", tile.representatives.len()),
                );
            }
            for rep in &tile.representatives {
                let Some(p) = points.get(rep.id.index()) else {
                    r.push(UnknownItem, Some(key), format!("id {} not in dataset", rep.id));
                    continue;
                };
                if p.x.to_bits() != rep.x.to_bits() || p.y.to_bits() != rep.y.to_bits() {
                    r.push(
                        UnknownItem,
                        Some(key),
                        format!(
                            "id {} stored at ({}, {}) but item is at ({}, {})",
                            rep.id, rep.x, rep.y, p.x, p.y
                        ),
                    );
                }
                if containing_tile(p.x, p.y, l as u32) != Some((key.ix, key.iy)) {
                    r.push(OutsideTile, Some(key), format!("id {} lies outside the tile", rep.id));
                }
                if rep.introduced_at_layer as usize > l {
                    r.push(
                        IntroducedLayer,
                        Some(key),
                        format!("id {} introduced at {} on layer {l}", rep.id, rep.introduced_at_layer),
                    );
                }
                if let Some((other, _)) = ids.insert(rep.id, (key, rep.introduced_at_layer)) {
                    r.push(DuplicateId, Some(key), format!("id {} also in tile {other}", rep.id));
                }
            }
        }
        seen.push(ids);
    }

    // nesting and introduction layers
    for l in 0..seen.len() {
        for (&id, &(key, intro)) in &seen[l] {
            if l > 0 {
                let was = seen[l - 1].get(&id);
                match was {
                    Some(&(_, prev_intro)) if prev_intro != intro => r.push(
                        IntroducedLayer,
                        Some(key),
                        format!("id {id} introduced at {prev_intro} on layer {} but {intro} here", l - 1),
                    ),
                    None if intro as usize != l => r.push(
                        IntroducedLayer,
                        Some(key),
                        format!("id {id} first appears on layer {l} but claims layer {intro}"),
                    ),
                    _ => {}
                }
            } else if intro != 0 {
                r.push(
                    IntroducedLayer,
                    Some(key),
                    format!("id {id} on layer 0 claims layer {intro}"),
                );
            }
            if let Some(next) = seen.get(l + 1) {
                if !next.contains_key(&id) {
                    r.push(Nesting, Some(key), format!("id {id} missing from layer {}", l + 1));
                }
            }
        }
    }

    // inheritance bound: earlier representatives inside each tile's area
    let mut earlier: BTreeSet<ItemId> = BTreeSet::new();
    for (l, layer) in pyramid.layers.iter().enumerate() {
        let mut per_tile: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for id in &earlier {
            if let Some(p) = points.get(id.index()) {
                if let Some(cell) = containing_tile(p.x, p.y, l as u32) {
                    *per_tile.entry(cell).or_default() += 1;
                }
            }
        }
        for (&(ix, iy), &count) in &per_tile {
            if count > k {
                let key = TileKey {
                    layer: l as u32,
                    ix,
                    iy,
                };
                r.push(
                    InheritanceBound,
                    Some(key),
                    format!("{count} inherited representatives, k = {k}"),
                );
            }
        }
        for (&(ix, iy), &count) in &per_tile {
            let key = TileKey {
                layer: l as u32,
                ix,
                iy,
            };
            let stored = layer.get(&key).map_or(0, |t| t.representatives.len());
            if stored < count {
                r.push(
                    Nesting,
                    Some(key),
                    format!("{count} earlier representatives inside, {stored} stored"),
                );
            }
        }
        earlier.extend(seen[l].keys().copied());
    }

    // completeness of the final layer
    if let Some(last) = pyramid.layers.last() {
        let mut count = vec![0u32; n];
        let mut total = 0usize;
        for tile in last.values() {
            for rep in &tile.representatives {
                if let Some(c) = count.get_mut(rep.id.index()) {
                    *c += 1;
                }
                total += 1;
            }
        }
        let missing: Vec<usize> = count
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(i, _)| i)
            .collect();
        if !missing.is_empty() || total != n {
            r.push(
                Completeness,
                None,
                format!(
                    "final layer lists {total} entries for {n} items; {} missing (first: {:?})",
                    missing.len(),
                    missing.iter().take(5).collect::<Vec<_>>()
                ),
            );
        }
    }

    r.0
}

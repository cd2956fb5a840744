//! Pyramid layout inside a store: `pyramid/manifest.json` plus one binary
//! tile record per non-empty tile at `pyramid/L<layer>/<ix>_<iy>.tile`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::TilePyramid;
use crate::format;
use crate::model::{AtlasManifest, TileKey};
use crate::store::{self, StoreError, PYRAMID_DIR};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn layer_dir(pyramid_dir: &Path, layer: u32) -> PathBuf {
    pyramid_dir.join(format!("L{layer}"))
}

pub fn tile_path(pyramid_dir: &Path, key: TileKey) -> PathBuf {
    layer_dir(pyramid_dir, key.layer).join(format!("{}_{}.tile", key.ix, key.iy))
}

fn parse_tile_name(layer: u32, name: &str) -> Option<TileKey> {
    let stem = name.strip_suffix(".tile")?;
    let (ix, iy) = stem.split_once('_')?;
    TileKey::new(layer, ix.parse().ok()?, iy.parse().ok()?)
}

/// Writes the pyramid under `<root>/pyramid`, replacing any previous one.
/// The new pyramid is assembled in a sibling directory and swapped in.
pub fn save(root: &Path, pyramid: &TilePyramid) -> Result<(), StoreError> {
    let final_dir = root.join(PYRAMID_DIR);
    let tmp = root.join(format!("{PYRAMID_DIR}.tmp"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
    for (l, layer) in pyramid.layers.iter().enumerate() {
        let dir = layer_dir(&tmp, l as u32);
        fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        for tile in layer.values() {
            let path = tile_path(&tmp, tile.key);
            fs::write(&path, format::encode_tile(tile)).map_err(|e| StoreError::io(&path, e))?;
        }
    }
    store::write_json(&tmp.join(MANIFEST_FILE), &pyramid.manifest)?;
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir).map_err(|e| StoreError::io(&final_dir, e))?;
    }
    fs::rename(&tmp, &final_dir).map_err(|e| StoreError::io(&final_dir, e))
}

pub fn load_manifest(root: &Path) -> Result<AtlasManifest, StoreError> {
    store::read_json(&root.join(PYRAMID_DIR).join(MANIFEST_FILE))
}

/// Reads a persisted pyramid back. Structural problems (unparseable file
/// names, truncated records, layer count) are errors; semantic checks are the
/// validator's job.
pub fn load(root: &Path) -> Result<TilePyramid, StoreError> {
    let dir = root.join(PYRAMID_DIR);
    let manifest = load_manifest(root)?;
    let mut layers = Vec::with_capacity(manifest.depth as usize + 1);
    for l in 0..=manifest.depth {
        let ldir = layer_dir(&dir, l);
        let mut tiles = BTreeMap::new();
        let entries = fs::read_dir(&ldir).map_err(|e| StoreError::io(&ldir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| StoreError::io(&ldir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let key = parse_tile_name(l, &name)
                .ok_or_else(|| StoreError::corrupt(format!("pyramid/L{l}/{name}"), "not a tile record name"))?;
            let bytes = fs::read(entry.path()).map_err(|e| StoreError::io(&entry.path(), e))?;
            let tile =
                format::decode_tile(key, &bytes).map_err(|e| StoreError::corrupt(format!("pyramid/L{l}/{name}"), e))?;
            tiles.insert(key, tile);
        }
        layers.push(tiles);
    }
    Ok(TilePyramid { manifest, layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProjectedPoint;
    use crate::tiling::{build_pyramid, TilingConfig};

    #[test]
    fn save_load_roundtrip() {
        let pts: Vec<_> = (0..300)
            .map(|i| {
                ProjectedPoint::new(
                    i as usize,
                    ((i * 37) % 101) as f32 / 100.0,
                    ((i * 53) % 97) as f32 / 96.0,
                )
            })
            .collect();
        let p = build_pyramid(
            &pts,
            &TilingConfig {
                k: 10,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &p).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.digest(), p.digest());
        // overwrite in place
        save(dir.path(), &p).unwrap();
        assert!(!dir.path().join("pyramid.tmp").exists());
    }

    #[test]
    fn tile_names() {
        assert_eq!(parse_tile_name(2, "3_1.tile"), TileKey::new(2, 3, 1));
        assert_eq!(parse_tile_name(2, "4_1.tile"), None);
        assert_eq!(parse_tile_name(2, "junk"), None);
    }
}

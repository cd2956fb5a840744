//! Ingestion of precomputed embeddings, metadata, captions and images.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use image::imageops::FilterType;
use image::{DynamicImage, ImageReader};
use rayon::prelude::*;
use thiserror::Error;
use tracing::{info, warn};

use crate::format::{self, FormatError, VectorMatrix};
use crate::model::ItemId;
use crate::store::{self, DatasetStore, StoreError, StoreInfo, THUMBNAIL_SIZES};

const THUMBNAIL_QUALITY: u8 = 85;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("vector dimension {0} is below the minimum of 2")]
    DimensionTooSmall(usize),
    #[error("zero-norm vector(s) rejected, item id(s) {ids:?}")]
    ZeroVectors { ids: Vec<u64> },
    #[error("metadata has {found} records but the vector file has {expected} rows")]
    MetadataCount { expected: usize, found: usize },
    #[error("{0} already contains a dataset store")]
    AlreadyExists(PathBuf),
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub vectors: PathBuf,
    pub metadata: PathBuf,
    pub captions: Option<PathBuf>,
    pub images_dir: Option<PathBuf>,
    pub out: PathBuf,
    /// Dataset name; defaults to the output directory name.
    pub name: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub items: usize,
    pub dimension: usize,
    pub captions: usize,
    pub images: usize,
    /// Items whose image could not be read; the server serves a placeholder.
    pub missing_images: Vec<ItemId>,
}

/// Unit-normalizes every row, computing norms in `f64`. Returns the ids of
/// all-zero rows as the error.
pub fn normalize_rows(m: &VectorMatrix) -> Result<VectorMatrix, Vec<u64>> {
    let mut zero = Vec::new();
    let mut data = Vec::with_capacity(m.data.len());
    for (i, row) in m.iter_rows().enumerate() {
        let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm == 0.0 {
            zero.push(i as u64);
            data.extend(std::iter::repeat_n(0.0, row.len()));
        } else {
            data.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
        }
    }
    if zero.is_empty() {
        Ok(VectorMatrix::new(m.rows, m.dim, data))
    } else {
        Err(zero)
    }
}

/// Builds a new store at `opts.out`. Ids are assigned `0..n` in file order.
pub fn ingest_embeddings(opts: &IngestOptions) -> Result<(DatasetStore, IngestReport), IngestError> {
    let out = &opts.out;
    if out.join(store::STORE_INFO).exists() {
        return Err(IngestError::AlreadyExists(out.clone()));
    }

    let vectors = format::read_vectors(&opts.vectors)?;
    if vectors.dim < 2 {
        return Err(IngestError::DimensionTooSmall(vectors.dim));
    }
    let n = vectors.rows;
    let normalized = normalize_rows(&vectors).map_err(|ids| IngestError::ZeroVectors { ids })?;

    let meta_text = fs::read_to_string(&opts.metadata).map_err(|e| FormatError::io(&opts.metadata, e))?;
    let metadata = format::parse_metadata(&meta_text)?;
    if metadata.len() != n {
        return Err(IngestError::MetadataCount {
            expected: n,
            found: metadata.len(),
        });
    }

    let captions = match &opts.captions {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| FormatError::io(p, e))?;
            format::parse_captions(&text, n)?
        }
        None => vec![None; n],
    };

    fs::create_dir_all(out).map_err(|e| StoreError::io(out, e))?;
    format::write_vectors(&out.join(store::VECTORS), &vectors)?;
    format::write_vectors(&out.join(store::NORMALIZED), &normalized)?;

    let mut meta_out = String::new();
    for m in &metadata {
        meta_out.push_str(&format::format_metadata_line(m));
        meta_out.push('\n');
    }
    let meta_path = out.join(store::METADATA);
    fs::write(&meta_path, meta_out).map_err(|e| StoreError::io(&meta_path, e))?;

    let cap_path = out.join(store::CAPTIONS);
    let mut cap_buf = Vec::new();
    format::write_captions(&mut cap_buf, &captions).expect("write to Vec");
    fs::write(&cap_path, cap_buf).map_err(|e| StoreError::io(&cap_path, e))?;

    let mut report = IngestReport {
        items: n,
        dimension: vectors.dim,
        captions: captions.iter().filter(|c| c.is_some()).count(),
        ..Default::default()
    };

    if let Some(images_dir) = &opts.images_dir {
        let results: Vec<(usize, Result<(), String>)> = metadata
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                let file = &m["filename"];
                (i, import_image(out, ItemId(i as u64), &images_dir.join(file)))
            })
            .collect();
        for (i, r) in results {
            match r {
                Ok(()) => report.images += 1,
                Err(msg) => {
                    warn!(item = i, "unreadable image, placeholder will be served: {msg}");
                    report.missing_images.push(ItemId(i as u64));
                }
            }
        }
    }

    let name = opts.name.clone().unwrap_or_else(|| {
        out.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    // store.json last: a crashed ingest never looks like a valid store
    store::write_json(&out.join(store::STORE_INFO), &StoreInfo::new(name, n, vectors.dim))?;
    info!(
        items = n,
        dimension = vectors.dim,
        images = report.images,
        "ingest complete"
    );

    Ok((DatasetStore::open(out)?, report))
}

fn import_image(root: &Path, id: ItemId, src: &Path) -> Result<(), String> {
    let bytes = fs::read(src).map_err(|e| format!("{}: {e}", src.display()))?;
    let reader = ImageReader::new(Cursor::new(&bytes))
        .with_guessed_format()
        .map_err(|e| e.to_string())?;
    let fmt = reader
        .format()
        .ok_or_else(|| format!("{}: unknown image format", src.display()))?;
    let img = reader.decode().map_err(|e| format!("{}: {e}", src.display()))?;

    let ext = fmt.extensions_str().first().copied().unwrap_or("img");
    let orig_dir = root.join(store::ASSETS_DIR).join("original");
    fs::create_dir_all(&orig_dir).map_err(|e| e.to_string())?;
    fs::write(orig_dir.join(format!("{id}.{ext}")), &bytes).map_err(|e| e.to_string())?;

    for size in THUMBNAIL_SIZES {
        let path = store::thumbnail_path(root, id, size);
        fs::create_dir_all(path.parent().unwrap()).map_err(|e| e.to_string())?;
        fs::write(&path, encode_thumbnail(&img, size)?).map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// JPEG thumbnail whose longest edge is `size` (never upscaled).
pub fn encode_thumbnail(img: &DynamicImage, size: u32) -> Result<Vec<u8>, String> {
    let thumb = if img.width().max(img.height()) > size {
        img.resize(size, size, FilterType::Triangle)
    } else {
        img.clone()
    };
    let mut buf = Vec::new();
    let rgb = DynamicImage::ImageRgb8(thumb.to_rgb8());
    rgb.write_with_encoder(JpegEncoder::new_with_quality(&mut buf, THUMBNAIL_QUALITY))
        .map_err(|e| e.to_string())?;
    Ok(buf)
}

/// Re-encodes the ingested vectors to `path`.
pub fn export_vectors(store: &DatasetStore, path: &Path) -> Result<(), IngestError> {
    let m = store.raw_vectors()?;
    format::write_vectors(path, &m)?;
    Ok(())
}

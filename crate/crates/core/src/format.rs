//! On-disk file formats.
//!
//! * Vector file (`AEV1`): `magic "AEV1" | version u32 | n u64 | dim u32`,
//!   then `n * dim` little-endian `f32` values, row-major.
//! * Coordinate file (`AEC1`): `magic "AEC1" | n u64`, then `n` pairs of
//!   little-endian `f32` `(x, y)`.
//! * Tile record: `count u32`, then per representative
//!   `id u64 | x f32 | y f32 | introduced_at_layer u16`, little-endian, packed.
//! * Metadata file: one line per item (line `i` is item `i`), TAB-separated
//!   `key:value` fields. `filename` is required; `label` and `url` are the
//!   other well-known keys. The key ends at the first `:`, so values may
//!   contain colons (URLs) but not TABs or newlines.
//! * Captions file: lines of `<id>\t<caption>`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{ItemId, Metadata, Representative, Tile, TileKey};

pub const VECTOR_MAGIC: &[u8; 4] = b"AEV1";
pub const VECTOR_VERSION: u32 = 1;
pub const VECTOR_HEADER_LEN: usize = 20;
pub const COORDS_MAGIC: &[u8; 4] = b"AEC1";
pub const COORDS_HEADER_LEN: usize = 12;
pub const TILE_ENTRY_LEN: usize = 18;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported vector file version {0}")]
    UnsupportedVersion(u32),
    #[error("file too short for header ({0} bytes)")]
    TruncatedHeader(usize),
    #[error("payload length mismatch: header implies {expected} bytes, found {actual}")]
    LengthMismatch { expected: u64, actual: u64 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl FormatError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Dense row-major matrix of `f32` vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl VectorMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * dim, "matrix data length");
        VectorMatrix { rows, dim, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim.max(1))
    }
}

fn magic_str(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

pub fn encode_vectors(m: &VectorMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(VECTOR_HEADER_LEN + m.data.len() * 4);
    out.extend_from_slice(VECTOR_MAGIC);
    out.extend_from_slice(&VECTOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim as u32).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes an `AEV1` buffer. Non-finite components are rejected.
pub fn decode_vectors(bytes: &[u8]) -> Result<VectorMatrix, FormatError> {
    if bytes.len() < VECTOR_HEADER_LEN {
        return Err(FormatError::TruncatedHeader(bytes.len()));
    }
    if &bytes[0..4] != VECTOR_MAGIC {
        return Err(FormatError::BadMagic {
            expected: magic_str(VECTOR_MAGIC),
            found: magic_str(&bytes[0..4]),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VECTOR_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as u64;
    let payload = &bytes[VECTOR_HEADER_LEN..];
    let expected = n.checked_mul(dim).and_then(|c| c.checked_mul(4)).unwrap_or(u64::MAX);
    if expected != payload.len() as u64 {
        return Err(FormatError::LengthMismatch {
            expected,
            actual: payload.len() as u64,
        });
    }
    let (n, dim) = (n as usize, dim as usize);
    let mut data = Vec::with_capacity(n * dim);
    for (i, c) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                row: i / dim,
                col: i % dim,
            });
        }
        data.push(v);
    }
    Ok(VectorMatrix { rows: n, dim, data })
}

pub fn read_vectors(path: &Path) -> Result<VectorMatrix, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode_vectors(&bytes)
}

pub fn write_vectors(path: &Path, m: &VectorMatrix) -> Result<(), FormatError> {
    fs::write(path, encode_vectors(m)).map_err(|e| FormatError::io(path, e))
}

pub fn encode_coords(points: &[[f32; 2]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(COORDS_HEADER_LEN + points.len() * 8);
    out.extend_from_slice(COORDS_MAGIC);
    out.extend_from_slice(&(points.len() as u64).to_le_bytes());
    for [x, y] in points {
        out.extend_from_slice(&x.to_le_bytes());
        out.extend_from_slice(&y.to_le_bytes());
    }
    out
}

/// Decodes an `AEC1` buffer. Values are returned verbatim; finiteness is the
/// caller's check because the error must name the offending row.
pub fn decode_coords(bytes: &[u8]) -> Result<Vec<[f32; 2]>, FormatError> {
    if bytes.len() < COORDS_HEADER_LEN {
        return Err(FormatError::TruncatedHeader(bytes.len()));
    }
    if &bytes[0..4] != COORDS_MAGIC {
        return Err(FormatError::BadMagic {
            expected: magic_str(COORDS_MAGIC),
            found: magic_str(&bytes[0..4]),
        });
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let payload = &bytes[COORDS_HEADER_LEN..];
    let expected = n.saturating_mul(8);
    if expected != payload.len() as u64 {
        return Err(FormatError::LengthMismatch {
            expected,
            actual: payload.len() as u64,
        });
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes(c[0..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..8].try_into().unwrap()),
            ]
        })
        .collect())
}

pub fn read_coords(path: &Path) -> Result<Vec<[f32; 2]>, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode_coords(&bytes)
}

pub fn write_coords(path: &Path, points: &[[f32; 2]]) -> Result<(), FormatError> {
    fs::write(path, encode_coords(points)).map_err(|e| FormatError::io(path, e))
}

pub fn encode_tile(tile: &Tile) -> Vec<u8> {
    let reps = &tile.representatives;
    let mut out = Vec::with_capacity(4 + reps.len() * TILE_ENTRY_LEN);
    out.extend_from_slice(&(reps.len() as u32).to_le_bytes());
    for r in reps {
        out.extend_from_slice(&r.id.0.to_le_bytes());
        out.extend_from_slice(&r.x.to_le_bytes());
        out.extend_from_slice(&r.y.to_le_bytes());
        out.extend_from_slice(&r.introduced_at_layer.to_le_bytes());
    }
    out
}

pub fn decode_tile(key: TileKey, bytes: &[u8]) -> Result<Tile, FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::TruncatedHeader(bytes.len()));
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as u64;
    let payload = &bytes[4..];
    let expected = count * TILE_ENTRY_LEN as u64;
    if expected != payload.len() as u64 {
        return Err(FormatError::LengthMismatch {
            expected,
            actual: payload.len() as u64,
        });
    }
    let representatives = payload
        .chunks_exact(TILE_ENTRY_LEN)
        .map(|c| Representative {
            id: ItemId(u64::from_le_bytes(c[0..8].try_into().unwrap())),
            x: f32::from_le_bytes(c[8..12].try_into().unwrap()),
            y: f32::from_le_bytes(c[12..16].try_into().unwrap()),
            introduced_at_layer: u16::from_le_bytes(c[16..18].try_into().unwrap()),
        })
        .collect();
    Ok(Tile { key, representatives })
}

pub const KNOWN_METADATA_KEYS: [&str; 3] = ["filename", "label", "url"];

pub fn parse_metadata_line(line: &str, lineno: usize) -> Result<Metadata, FormatError> {
    let mut meta = Metadata::new();
    for field in line.split('\t').filter(|f| !f.is_empty()) {
        let Some((key, value)) = field.split_once(':') else {
            return Err(FormatError::Parse {
                line: lineno,
                msg: format!("field {field:?} is not key:value"),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(FormatError::Parse {
                line: lineno,
                msg: "empty key".into(),
            });
        }
        if meta.insert(key.to_string(), value.to_string()).is_some() {
            return Err(FormatError::Parse {
                line: lineno,
                msg: format!("duplicate key {key:?}"),
            });
        }
    }
    if !meta.contains_key("filename") {
        return Err(FormatError::Parse {
            line: lineno,
            msg: "missing filename field".into(),
        });
    }
    Ok(meta)
}

/// Parses a metadata file. Line numbers in errors are 1-based.
pub fn parse_metadata(text: &str) -> Result<Vec<Metadata>, FormatError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| parse_metadata_line(l.strip_suffix('\r').unwrap_or(l), i + 1))
        .collect()
}

/// Canonical text form: `filename` first, then the remaining keys in order.
pub fn format_metadata_line(meta: &Metadata) -> String {
    let mut fields = Vec::with_capacity(meta.len());
    if let Some(f) = meta.get("filename") {
        fields.push(format!("filename:{f}"));
    }
    for (k, v) in meta.iter().filter(|(k, _)| k.as_str() != "filename") {
        fields.push(format!("{k}:{v}"));
    }
    fields.join("\t")
}

/// Parses a captions file into a per-item vector of length `n`.
pub fn parse_captions(text: &str, n: usize) -> Result<Vec<Option<String>>, FormatError> {
    let mut out = vec![None; n];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let (id, caption) = line.split_once('\t').ok_or_else(|| FormatError::Parse {
            line: lineno,
            msg: "expected <id><TAB><caption>".into(),
        })?;
        let id: usize = id.trim().parse().map_err(|_| FormatError::Parse {
            line: lineno,
            msg: format!("invalid item id {id:?}"),
        })?;
        let slot = out.get_mut(id).ok_or_else(|| FormatError::Parse {
            line: lineno,
            msg: format!("item id {id} out of range (n = {n})"),
        })?;
        if slot.is_some() {
            return Err(FormatError::Parse {
                line: lineno,
                msg: format!("duplicate caption for item {id}"),
            });
        }
        *slot = Some(caption.to_string());
    }
    Ok(out)
}

pub fn write_captions<W: Write>(mut w: W, captions: &[Option<String>]) -> io::Result<()> {
    for (id, c) in captions.iter().enumerate() {
        if let Some(c) = c {
            writeln!(w, "{id}\t{c}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vector_header_layout() {
        let m = VectorMatrix::new(3, 4, (0..12).map(|i| i as f32).collect());
        let bytes = encode_vectors(&m);
        assert_eq!(bytes.len(), VECTOR_HEADER_LEN + 48);
        assert_eq!(&bytes[0..4], b"AEV1");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
        assert_eq!(decode_vectors(&bytes).unwrap(), m);
    }

    #[test]
    fn vector_length_mismatch() {
        let m = VectorMatrix::new(3, 4, vec![1.0; 12]);
        let mut bytes = encode_vectors(&m);
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            decode_vectors(&bytes),
            Err(FormatError::LengthMismatch {
                expected: 48,
                actual: 44
            })
        ));
    }

    #[test]
    fn vector_bad_magic_and_nan() {
        let mut bytes = encode_vectors(&VectorMatrix::new(1, 2, vec![1.0, f32::NAN]));
        assert!(matches!(
            decode_vectors(&bytes),
            Err(FormatError::NonFinite { row: 0, col: 1 })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode_vectors(&bytes), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn tile_record_layout() {
        let t = Tile {
            key: TileKey::ROOT,
            representatives: vec![Representative {
                id: ItemId(7),
                x: 0.25,
                y: 0.5,
                introduced_at_layer: 3,
            }],
        };
        let b = encode_tile(&t);
        assert_eq!(b.len(), 4 + 18);
        assert_eq!(&b[0..4], &1u32.to_le_bytes());
        assert_eq!(&b[4..12], &7u64.to_le_bytes());
        assert_eq!(&b[20..22], &3u16.to_le_bytes());
        assert_eq!(decode_tile(TileKey::ROOT, &b).unwrap(), t);
    }

    #[test]
    fn metadata_lines() {
        let m = parse_metadata("filename:a.jpg\tlabel:cat\turl:http://x/y.jpg\nfilename:b.png\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0]["url"], "http://x/y.jpg");
        assert_eq!(m[0]["label"], "cat");
        assert!(!m[1].contains_key("label"));
        assert_eq!(
            format_metadata_line(&m[0]),
            "filename:a.jpg\tlabel:cat\turl:http://x/y.jpg"
        );

        assert!(matches!(
            parse_metadata("filename:a\nlabel:x\n"),
            Err(FormatError::Parse { line: 2, .. })
        ));
        assert!(parse_metadata("filename:a\tfilename:b").is_err());
        assert!(parse_metadata("nonsense").is_err());
    }

    #[test]
    fn captions_file() {
        let c = parse_captions("2\ta red bicycle\n\n0\tx: y\n", 3).unwrap();
        assert_eq!(c, vec![Some("x: y".into()), None, Some("a red bicycle".into())]);
        assert!(parse_captions("3\tout of range", 3).is_err());
        assert!(parse_captions("1\ta\n1\tb", 3).is_err());
        assert!(parse_captions("no tab here", 3).is_err());
        let mut buf = Vec::new();
        write_captions(&mut buf, &c).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0\tx: y\n2\ta red bicycle\n");
    }

    proptest! {
        #[test]
        fn coords_roundtrip(pts in proptest::collection::vec((-1e6f32..1e6, -1e6f32..1e6), 0..64)) {
            let pts: Vec<[f32; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            prop_assert_eq!(decode_coords(&encode_coords(&pts)).unwrap(), pts);
        }

        #[test]
        fn vectors_roundtrip(rows in 0usize..8, dim in 1usize..8, seed in any::<u32>()) {
            let data: Vec<f32> = (0..rows * dim).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 * 1e-6).collect();
            let m = VectorMatrix::new(rows, dim, data);
            let bytes = encode_vectors(&m);
            prop_assert_eq!(&decode_vectors(&bytes).unwrap(), &m);
        }
    }
}

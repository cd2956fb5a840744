//! Query resolution: text, image, raw vector or existing item, looked up in
//! the vector index.

mod embedder;

use base64::Engine;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

pub use embedder::{EmbedError, EmbedInput, Embedder, HttpEmbedder, MockEmbedder, DEFAULT_IN_FLIGHT, DEFAULT_TIMEOUT};

use crate::index::{IndexError, SearchResult, VectorIndex};
use crate::model::{ItemId, ProjectedPoint};
use crate::store::DatasetStore;

pub const DEFAULT_RESULT_COUNT: usize = 9;
pub const MAX_RESULT_COUNT: usize = 100;
pub const MAX_IMAGE_BYTES: usize = 8 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum QueryInput {
    Text(String),
    Image(Vec<u8>),
    Vector(Vec<f32>),
    Item(ItemId),
}

impl QueryInput {
    pub fn kind(&self) -> &'static str {
        match self {
            QueryInput::Text(_) => "text",
            QueryInput::Image(_) => "image",
            QueryInput::Vector(_) => "vector",
            QueryInput::Item(_) => "item",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub input: QueryInput,
    pub n: usize,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("malformed query: {0}")]
    BadQuery(String),
    #[error("image of {size} bytes exceeds the {limit}-byte limit")]
    ImageTooLarge { size: usize, limit: usize },
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

impl Query {
    pub fn new(input: QueryInput, n: Option<usize>) -> Result<Self, SearchError> {
        let n = n.unwrap_or(DEFAULT_RESULT_COUNT);
        if !(1..=MAX_RESULT_COUNT).contains(&n) {
            return Err(SearchError::BadQuery(format!(
                "n must be in 1..={MAX_RESULT_COUNT}, got {n}"
            )));
        }
        if let QueryInput::Image(b) = &input {
            if b.len() > MAX_IMAGE_BYTES {
                return Err(SearchError::ImageTooLarge {
                    size: b.len(),
                    limit: MAX_IMAGE_BYTES,
                });
            }
        }
        Ok(Query { input, n })
    }

    /// Parses the JSON request body `{"kind": ..., "data": ..., "n": ...}`.
    /// `data` is a string for text, base64 for image, a number array for
    /// vector and an integer id for item.
    pub fn from_json(body: &Value) -> Result<Self, SearchError> {
        let bad = |m: &str| SearchError::BadQuery(m.to_string());
        let obj = body.as_object().ok_or_else(|| bad("body must be a JSON object"))?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "kind" | "data" | "n") {
                return Err(SearchError::BadQuery(format!("unexpected field {key:?}")));
            }
        }
        let kind = obj
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("missing string field \"kind\""))?;
        let data = obj.get("data").ok_or_else(|| bad("missing field \"data\""))?;
        let n = match obj.get("n") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_u64().ok_or_else(|| bad("n must be a positive integer"))? as usize),
        };
        let input = match kind {
            "text" => {
                let t = data.as_str().ok_or_else(|| bad("text data must be a string"))?;
                if t.trim().is_empty() {
                    return Err(bad("text query is empty"));
                }
                QueryInput::Text(t.to_string())
            }
            "image" => {
                let s = data.as_str().ok_or_else(|| bad("image data must be a base64 string"))?;
                // reject before decoding: base64 expands by 4/3
                if s.len() / 4 * 3 > MAX_IMAGE_BYTES + 3 {
                    return Err(SearchError::ImageTooLarge {
                        size: s.len() / 4 * 3,
                        limit: MAX_IMAGE_BYTES,
                    });
                }
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(s)
                    .map_err(|e| SearchError::BadQuery(format!("image data is not base64: {e}")))?;
                if bytes.is_empty() {
                    return Err(bad("image data is empty"));
                }
                QueryInput::Image(bytes)
            }
            "vector" => {
                let arr = data
                    .as_array()
                    .ok_or_else(|| bad("vector data must be an array of numbers"))?;
                let v = arr
                    .iter()
                    .map(|x| x.as_f64().map(|f| f as f32))
                    .collect::<Option<Vec<f32>>>()
                    .ok_or_else(|| bad("vector data must be an array of numbers"))?;
                QueryInput::Vector(v)
            }
            "item" => QueryInput::Item(ItemId(
                data.as_u64().ok_or_else(|| bad("item data must be an integer id"))?,
            )),
            other => return Err(SearchError::BadQuery(format!("unknown kind {other:?}"))),
        };
        Query::new(input, n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub result: SearchResult,
    /// Position of the top hit, when the store has a projection.
    pub best_match: Option<ProjectedPoint>,
}

/// Resolves `query` to a vector and runs it against `index`. Item queries
/// exclude the item itself.
pub fn semantic_search(
    query: &Query,
    index: &VectorIndex,
    store: &DatasetStore,
    embedder: Option<&dyn Embedder>,
) -> Result<SearchOutcome, SearchError> {
    let embed = |input: EmbedInput<'_>| -> Result<Vec<f32>, SearchError> {
        let e = embedder.ok_or_else(|| EmbedError::Unavailable("no embedder configured".into()))?;
        Ok(e.embed(input)?)
    };
    let result = match &query.input {
        QueryInput::Text(t) => index.query(&embed(EmbedInput::Text(t))?, query.n)?,
        QueryInput::Image(b) => index.query(&embed(EmbedInput::Image(b))?, query.n)?,
        QueryInput::Vector(v) => index.query(v, query.n)?,
        QueryInput::Item(id) => {
            let v = store.normalized_vector(*id).ok_or(SearchError::UnknownItem(*id))?;
            let mut r = index.query(v, query.n + 1)?;
            r.entries.retain(|h| h.id != *id);
            r.entries.truncate(query.n);
            r
        }
    };
    let best_match = result
        .entries
        .first()
        .and_then(|h| store.projection().and_then(|p| p.points.get(h.id.index()).copied()));
    Ok(SearchOutcome { result, best_match })
}

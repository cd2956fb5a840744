use std::collections::BTreeMap;
use std::sync::Arc;

use aeye_core::index::{IndexError, SearchHit};
use aeye_core::model::{ItemId, ProjectedPoint, TileKey};
use aeye_core::search::{semantic_search, EmbedError, Query, QueryInput, SearchError};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::{AppState, Dataset, BODY_LIMIT, RETRY_AFTER_SECS};

pub const PLACEHOLDER_HEADER: &str = "x-aeye-placeholder";
const PLACEHOLDER_MAX_AGE: u64 = 300;
const TILE_THUMB_SIZE: u32 = 128;

type Shared = Arc<AppState>;

pub(crate) fn routes(state: Shared) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/api/datasets", get(list_datasets))
        .route("/api/datasets/{ds}/manifest", get(manifest))
        .route("/api/datasets/{ds}/tiles/{layer}/{ix}/{iy}", get(tile))
        .route("/api/datasets/{ds}/items/{id}", get(item))
        .route("/api/datasets/{ds}/search", post(search))
        .route("/media/{ds}/{id}/{size}", get(media))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// JSON error document returned with every non-2xx status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after_secs: Option<u64>,
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: code.to_string(),
                message: message.into(),
                retry_after_secs: None,
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let retry = self.body.retry_after_secs;
        let mut resp = (self.status, Json(self.body)).into_response();
        if let Some(secs) = retry {
            resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        resp
    }
}

impl From<SearchError> for ApiError {
    fn from(e: SearchError) -> Self {
        let msg = e.to_string();
        match e {
            SearchError::BadQuery(_) => ApiError::bad_request(msg),
            SearchError::ImageTooLarge { .. } => ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", msg),
            SearchError::UnknownItem(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_item", msg),
            SearchError::Embed(EmbedError::Unavailable(_)) => {
                let mut err = ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "embedder_unavailable", msg);
                err.body.retry_after_secs = Some(RETRY_AFTER_SECS);
                err
            }
            SearchError::Embed(EmbedError::EmptyPayload(_)) => ApiError::bad_request(msg),
            SearchError::Embed(_) => ApiError::new(StatusCode::BAD_GATEWAY, "embedder_protocol", msg),
            SearchError::Index(
                IndexError::DimensionMismatch { .. } | IndexError::ZeroQuery | IndexError::NonFiniteQuery,
            ) => ApiError::bad_request(msg),
            SearchError::Index(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

fn dataset(state: &AppState, name: &str) -> Result<Arc<Dataset>, ApiError> {
    state.datasets.get(name).cloned().ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_dataset",
            format!("no dataset named {name:?}"),
        )
    })
}

fn parse_u32(s: &str, what: &str) -> Result<u32, ApiError> {
    s.parse()
        .map_err(|_| ApiError::bad_request(format!("{what} must be a non-negative integer, got {s:?}")))
}

fn parse_item(ds: &Dataset, s: &str) -> Result<ItemId, ApiError> {
    let id = ItemId(
        s.parse()
            .map_err(|_| ApiError::bad_request(format!("item id must be an integer, got {s:?}")))?,
    );
    if !ds.store.contains(id) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_item",
            format!("no item {id}"),
        ));
    }
    Ok(id)
}

fn thumb_url(ds: &str, id: ItemId, size: u32) -> String {
    format!("/media/{ds}/{id}/{size}")
}

fn cache_control(max_age: u64) -> (header::HeaderName, String) {
    (header::CACHE_CONTROL, format!("public, max-age={max_age}, immutable"))
}

async fn healthz() -> impl IntoResponse {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub item_count: u64,
    pub depth: u32,
    pub k: u32,
}

async fn list_datasets(State(state): State<Shared>) -> impl IntoResponse {
    let list: Vec<DatasetSummary> = state
        .datasets
        .iter()
        .map(|(name, ds)| DatasetSummary {
            name: name.clone(),
            item_count: ds.pyramid.manifest.item_count,
            depth: ds.pyramid.manifest.depth,
            k: ds.pyramid.manifest.k,
        })
        .collect();
    Json(list)
}

async fn manifest(State(state): State<Shared>, Path(ds): Path<String>) -> Result<Response, ApiError> {
    let d = dataset(&state, &ds)?;
    Ok(Json(d.pyramid.manifest.clone()).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileEntry {
    pub id: ItemId,
    pub x: f32,
    pub y: f32,
    pub introduced_at_layer: u16,
    pub thumbnail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePayload {
    pub layer: u32,
    pub ix: u32,
    pub iy: u32,
    pub representatives: Vec<TileEntry>,
}

async fn tile(
    State(state): State<Shared>,
    Path((ds, layer, ix, iy)): Path<(String, String, String, String)>,
) -> Result<Response, ApiError> {
    let d = dataset(&state, &ds)?;
    let (layer, ix, iy) = (
        parse_u32(&layer, "layer")?,
        parse_u32(&ix, "ix")?,
        parse_u32(&iy, "iy")?,
    );
    let depth = d.pyramid.depth();
    if layer > depth {
        return Err(ApiError::bad_request(format!(
            "layer {layer} is deeper than the pyramid depth {depth}"
        )));
    }
    let key = TileKey::new(layer, ix, iy).ok_or_else(|| {
        ApiError::bad_request(format!(
            "tile ({ix}, {iy}) is outside the {0}x{0} grid of layer {layer}",
            1u64 << layer
        ))
    })?;
    let representatives = d
        .pyramid
        .tile(key)
        .map(|t| {
            t.representatives
                .iter()
                .map(|r| TileEntry {
                    id: r.id,
                    x: r.x,
                    y: r.y,
                    introduced_at_layer: r.introduced_at_layer,
                    thumbnail: thumb_url(&ds, r.id, TILE_THUMB_SIZE),
                })
                .collect()
        })
        .unwrap_or_default();
    let payload = TilePayload {
        layer,
        ix,
        iy,
        representatives,
    };
    Ok(([cache_control(state.media_max_age)], Json(payload)).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: ItemId,
    pub similarity: f64,
    pub thumbnail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f32,
    pub y: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDetail {
    pub id: ItemId,
    pub metadata: BTreeMap<String, String>,
    /// `None` when the dataset has no caption for this item.
    pub caption: Option<String>,
    pub has_caption: bool,
    pub position: Option<Position>,
    pub thumbnail: String,
    pub original: String,
    pub neighbors: Vec<Neighbor>,
}

fn neighbors(ds: &str, hits: &[SearchHit]) -> Vec<Neighbor> {
    hits.iter()
        .map(|h| Neighbor {
            id: h.id,
            similarity: h.similarity,
            thumbnail: thumb_url(ds, h.id, TILE_THUMB_SIZE),
        })
        .collect()
}

async fn item(State(state): State<Shared>, Path((ds, id)): Path<(String, String)>) -> Result<Response, ApiError> {
    let d = dataset(&state, &ds)?;
    let id = parse_item(&d, &id)?;
    let query = Query::new(QueryInput::Item(id), None)?;
    let d2 = d.clone();
    let outcome = tokio::task::spawn_blocking(move || semantic_search(&query, &d2.index, &d2.store, None))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let caption = d.store.caption(id).map(str::to_string);
    let detail = ItemDetail {
        id,
        metadata: d.store.metadata(id).cloned().unwrap_or_default(),
        has_caption: caption.is_some(),
        caption,
        position: d
            .store
            .projection()
            .and_then(|p| p.points.get(id.index()))
            .map(|p| Position { x: p.x, y: p.y }),
        thumbnail: thumb_url(&ds, id, 512),
        original: format!("/media/{ds}/{id}/original"),
        neighbors: neighbors(&ds, &outcome.result.entries),
    };
    Ok(Json(detail).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub kind: String,
    pub entries: Vec<Neighbor>,
    /// Where the viewer should fly to: the top hit's position.
    pub best_match: Option<ProjectedPoint>,
}

async fn search(State(state): State<Shared>, Path(ds): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let d = dataset(&state, &ds)?;
    let value: serde_json::Value =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("body is not valid JSON: {e}")))?;
    let query = Query::from_json(&value)?;
    let kind = query.input.kind().to_string();
    let embedder = state.embedder.clone();
    let outcome = tokio::task::spawn_blocking(move || semantic_search(&query, &d.index, &d.store, embedder.as_deref()))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(SearchResponse {
        kind,
        entries: neighbors(&ds, &outcome.result.entries),
        best_match: outcome.best_match,
    })
    .into_response())
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

async fn media(
    State(state): State<Shared>,
    Path((ds, id, size)): Path<(String, String, String)>,
) -> Result<Response, ApiError> {
    let d = dataset(&state, &ds)?;
    let id = parse_item(&d, &id)?;
    let path = match size.as_str() {
        "original" => d.store.original_path(id),
        s => {
            let px = parse_u32(s, "size")?;
            if !aeye_core::store::THUMBNAIL_SIZES.contains(&px) {
                return Err(ApiError::bad_request(format!(
                    "size must be one of 32, 128, 512 or original, got {s}"
                )));
            }
            Some(d.store.thumbnail_path(id, px))
        }
    };
    let bytes = match &path {
        Some(p) => tokio::fs::read(p).await.ok(),
        None => None,
    };
    Ok(match (bytes, path) {
        (Some(bytes), Some(p)) => (
            [
                (header::CONTENT_TYPE, content_type(&p).to_string()),
                cache_control(state.media_max_age),
            ],
            bytes,
        )
            .into_response(),
        _ => (
            [
                (header::CONTENT_TYPE, "image/png".to_string()),
                (header::CACHE_CONTROL, format!("public, max-age={PLACEHOLDER_MAX_AGE}")),
                (header::HeaderName::from_static(PLACEHOLDER_HEADER), "1".to_string()),
            ],
            state.placeholder.clone(),
        )
            .into_response(),
    })
}

/// Neutral grey square served in place of missing media.
pub(crate) fn placeholder_png() -> Vec<u8> {
    let img = image::RgbaImage::from_pixel(32, 32, image::Rgba([200, 200, 200, 255]));
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("png encoding");
    out.into_inner()
}

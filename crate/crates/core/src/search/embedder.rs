//! Clients for the external embedding service.
//!
//! Wire protocol: `POST <endpoint>/embed` with `{"kind": "text"|"image",
//! "data": <text or base64 image>}`, answered by `{"vector": [f32; D]}`.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedInput<'a> {
    Text(&'a str),
    Image(&'a [u8]),
}

impl EmbedInput<'_> {
    pub fn kind(&self) -> &'static str {
        match self {
            EmbedInput::Text(_) => "text",
            EmbedInput::Image(_) => "image",
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            EmbedInput::Text(t) => t.is_empty(),
            EmbedInput::Image(b) => b.is_empty(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    /// Service unreachable, timed out, or answered with a server error.
    #[error("embedder unavailable: {0}")]
    Unavailable(String),
    #[error("embedder returned {actual} values, expected {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("embedder protocol error: {0}")]
    Protocol(String),
    #[error("empty {0} payload")]
    EmptyPayload(&'static str),
}

/// Turns live text or image queries into vectors of a fixed dimension.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, EmbedError>;
}

fn check_vector(v: Vec<f32>, expected: usize) -> Result<Vec<f32>, EmbedError> {
    if v.len() != expected {
        return Err(EmbedError::Dimension {
            expected,
            actual: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EmbedError::Protocol("vector has non-finite values".into()));
    }
    Ok(v)
}

/// Counting semaphore bounding concurrent calls to the service.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    kind: &'static str,
    data: std::borrow::Cow<'a, str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f32>,
}

/// HTTP client for the embedding service.
#[derive(Debug)]
pub struct HttpEmbedder {
    endpoint: String,
    dimension: usize,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, dimension: usize) -> Self {
        Self::with_options(endpoint, dimension, DEFAULT_TIMEOUT, DEFAULT_IN_FLIGHT)
    }

    pub fn with_options(endpoint: impl Into<String>, dimension: usize, timeout: Duration, in_flight: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpEmbedder {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            dimension,
            agent,
            limiter: Limiter::new(in_flight),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, EmbedError> {
        if input.is_empty() {
            return Err(EmbedError::EmptyPayload(input.kind()));
        }
        let data = match input {
            EmbedInput::Text(t) => std::borrow::Cow::Borrowed(t),
            EmbedInput::Image(b) => std::borrow::Cow::Owned(base64::engine::general_purpose::STANDARD.encode(b)),
        };
        let body = EmbedRequest {
            kind: input.kind(),
            data,
        };
        let _permit = self.limiter.acquire();
        let url = format!("{}/embed", self.endpoint);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(&body)
            .map_err(|e| EmbedError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 || status == 429 {
            return Err(EmbedError::Unavailable(format!("service answered {status}")));
        }
        if status != 200 {
            return Err(EmbedError::Protocol(format!("service answered {status}")));
        }
        let parsed: EmbedResponse = resp.body_mut().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) | ureq::Error::Io(_) => EmbedError::Unavailable(e.to_string()),
            other => EmbedError::Protocol(other.to_string()),
        })?;
        check_vector(parsed.vector, self.dimension)
    }
}

/// Deterministic offline embedder: every input hashes to a fixed pseudo-random
/// unit vector; individual texts can be pinned to chosen vectors.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dimension: usize,
    overrides: HashMap<String, Vec<f32>>,
}

impl MockEmbedder {
    pub fn new(dimension: usize) -> Self {
        MockEmbedder {
            dimension,
            overrides: HashMap::new(),
        }
    }

    pub fn with_text(mut self, text: impl Into<String>, vector: Vec<f32>) -> Self {
        self.overrides.insert(text.into(), vector);
        self
    }

    pub fn hashed_vector(&self, tag: &str, bytes: &[u8]) -> Vec<f32> {
        let digest = Sha256::new()
            .chain_update(tag)
            .chain_update([0u8])
            .chain_update(bytes)
            .finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let v: Vec<f32> = (0..self.dimension).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            if norm > 0.0 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

impl Embedder for MockEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, EmbedError> {
        if input.is_empty() {
            return Err(EmbedError::EmptyPayload(input.kind()));
        }
        let v = match input {
            EmbedInput::Text(t) => match self.overrides.get(t) {
                Some(v) => v.clone(),
                None => self.hashed_vector("text", t.as_bytes()),
            },
            EmbedInput::Image(b) => self.hashed_vector("image", b),
        };
        check_vector(v, self.dimension)
    }
}

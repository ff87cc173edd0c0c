//! Text embedding providers behind one interface: a remote HTTP embedder
//! for real encoder models and a deterministic seeded embedder for tests.
//! Vectors are L2-normalized at the boundary so dot products are cosines.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding request failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },
    #[error("malformed embedding response: {0}")]
    BadResponse(String),
}

/// A fixed-dimension, L2-normalized embedding. The empty string embeds to
/// the zero vector, flagged so similarity code can treat it as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub is_zero: bool,
}

impl EmbeddingVector {
    pub fn zero(dimension: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dimension],
            is_zero: true,
        }
    }

    /// Normalize in place; a (near-)zero vector becomes the flagged zero vector.
    pub fn normalized(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return EmbeddingVector::zero(values.len());
        }
        EmbeddingVector {
            values: values.iter().map(|v| v / norm).collect(),
            is_zero: false,
        }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

/// Cosine similarity of two embeddings. Zero vectors contribute 0.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dimension() != b.dimension() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dimension(),
            got: b.dimension(),
        });
    }
    if a.is_zero || b.is_zero {
        return Ok(0.0);
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y)
        .sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedBackend {
    Remote,
    DeterministicTest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub backend: EmbedBackend,
    /// Remote backend only.
    pub endpoint: Option<String>,
    pub dimension: usize,
    pub cache_capacity: usize,
    /// Deterministic-test backend only.
    pub seed: u64,
    pub timeout_secs: u64,
    pub retries: u32,
    pub max_in_flight: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            backend: EmbedBackend::DeterministicTest,
            endpoint: None,
            dimension: 256,
            cache_capacity: 4096,
            seed: 0,
            timeout_secs: 30,
            retries: 3,
            max_in_flight: 8,
        }
    }
}

/// Least-recently-used cache keyed by exact text bytes.
struct LruCache {
    entries: HashMap<String, (u64, EmbeddingVector)>,
    tick: u64,
    capacity: usize,
}

impl LruCache {
    fn new(capacity: usize) -> Self {
        LruCache {
            entries: HashMap::new(),
            tick: 0,
            capacity,
        }
    }

    fn get(&mut self, key: &str) -> Option<EmbeddingVector> {
        self.tick += 1;
        let tick = self.tick;
        self.entries.get_mut(key).map(|(t, v)| {
            *t = tick;
            v.clone()
        })
    }

    fn put(&mut self, key: String, value: EmbeddingVector) {
        if self.capacity == 0 {
            return;
        }
        self.tick += 1;
        if self.entries.len() >= self.capacity && !self.entries.contains_key(&key) {
            if let Some(oldest) = self
                .entries
                .iter()
                .min_by_key(|(_, (t, _))| *t)
                .map(|(k, _)| k.clone())
            {
                self.entries.remove(&oldest);
            }
        }
        self.entries.insert(key, (self.tick, value));
    }
}

/// The encoder boundary. Implementations must be deterministic for a fixed
/// configuration and return L2-normalized vectors of the configured
/// dimension.
pub trait Embedder: Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
    fn dimension(&self) -> usize;
}

/// Builds the embedder described by the config.
pub fn build_embedder(config: &EmbedderConfig) -> Box<dyn Embedder> {
    match config.backend {
        EmbedBackend::DeterministicTest => Box::new(DeterministicEmbedder::new(config)),
        EmbedBackend::Remote => Box::new(RemoteEmbedder::new(config)),
    }
}

/// Derives each vector from a seeded hash of the text: distinct texts get
/// near-orthogonal directions at high dimension, identical texts get
/// identical vectors.
pub struct DeterministicEmbedder {
    dimension: usize,
    seed: u64,
    cache: Mutex<LruCache>,
}

impl DeterministicEmbedder {
    pub fn new(config: &EmbedderConfig) -> Self {
        DeterministicEmbedder {
            dimension: config.dimension,
            seed: config.seed,
            cache: Mutex::new(LruCache::new(config.cache_capacity)),
        }
    }

    fn compute(&self, text: &str) -> EmbeddingVector {
        if text.is_empty() {
            return EmbeddingVector::zero(self.dimension);
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let mut seed_bytes = [0u8; 32];
        seed_bytes.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed_bytes);
        // Box-Muller-free: uniform in [-1, 1) is directionally uniform enough
        // after normalization for near-orthogonality at d >= 256.
        let values: Vec<f64> = (0..self.dimension)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        EmbeddingVector::normalized(values)
    }
}

impl Embedder for DeterministicEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if let Some(hit) = self.cache.lock().unwrap().get(text) {
            return Ok(hit);
        }
        let v = self.compute(text);
        self.cache.lock().unwrap().put(text.to_string(), v.clone());
        Ok(v)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// POST `{"texts": [..]}` → `{"embeddings": [[..], ..]}` with bounded
/// retries; responses are normalized and cached.
pub struct RemoteEmbedder {
    endpoint: String,
    dimension: usize,
    retries: u32,
    client: reqwest::blocking::Client,
    cache: Mutex<LruCache>,
}

impl RemoteEmbedder {
    pub fn new(config: &EmbedderConfig) -> Self {
        let endpoint = std::env::var("AUTOPROMPT_EMBED_ENDPOINT")
            .ok()
            .or_else(|| config.endpoint.clone())
            .unwrap_or_default();
        RemoteEmbedder {
            endpoint,
            dimension: config.dimension,
            retries: config.retries,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(config.timeout_secs))
                .build()
                .expect("http client"),
            cache: Mutex::new(LruCache::new(config.cache_capacity)),
        }
    }

    fn request(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut last = String::new();
        let attempts = self.retries.max(1);
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 << attempt.min(6)));
            }
            let result = self
                .client
                .post(&self.endpoint)
                .json(&EmbedRequest { texts: vec![text] })
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.json::<EmbedResponse>());
            match result {
                Ok(resp) => {
                    let values = resp
                        .embeddings
                        .into_iter()
                        .next()
                        .ok_or_else(|| EmbedError::BadResponse("empty embeddings".into()))?;
                    if values.len() != self.dimension {
                        return Err(EmbedError::DimensionMismatch {
                            expected: self.dimension,
                            got: values.len(),
                        });
                    }
                    return Ok(EmbeddingVector::normalized(values));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(EmbedError::Transport { attempts, last })
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.is_empty() {
            return Ok(EmbeddingVector::zero(self.dimension));
        }
        if let Some(hit) = self.cache.lock().unwrap().get(text) {
            return Ok(hit);
        }
        let v = self.request(text)?;
        self.cache.lock().unwrap().put(text.to_string(), v.clone());
        Ok(v)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

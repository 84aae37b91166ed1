//! Text embeddings and brute-force k-nearest-neighbor search.

use std::time::Duration;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,

    #[error("vector has {got} dimensions, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector contains a non-finite value")]
    NonFinite,

    #[error("duplicate index id {0}")]
    DuplicateId(String),

    #[error("embedding provider: {0}")]
    Provider(String),
}

/// A finite, fixed-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &EmbeddingVector) -> f64 {
        euclidean(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "if", "in", "into", "is",
    "it", "of", "on", "or", "than", "that", "the", "their", "them", "then", "this", "to",
    "using", "when", "where", "which", "with",
];

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn stem(word: &str) -> &str {
    if word.len() > 4 {
        if let Some(s) = word.strip_suffix("ies") {
            return s;
        }
        if let Some(s) = word.strip_suffix("es").filter(|s| s.ends_with("ss") || s.ends_with("ch")) {
            return s;
        }
        if let Some(s) = word.strip_suffix('s').filter(|s| !s.ends_with('s')) {
            return s;
        }
    }
    word
}

pub const DEFAULT_HASH_DIM: usize = 256;

/// Deterministic bag-of-words embedder: stemmed tokens and token bigrams are
/// hashed into signed buckets, then L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder { dim }
    }

    fn add(&self, v: &mut [f64], feature: &str, weight: f64) {
        let h = fnv1a(feature.as_bytes());
        let idx = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign * weight;
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(DEFAULT_HASH_DIM)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let lowered = text.to_lowercase();
        let tokens: Vec<&str> = lowered
            .split(|c: char| !c.is_alphanumeric() && c != '_')
            .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
            .map(stem)
            .collect();
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            self.add(&mut v, t, 1.0);
        }
        for pair in tokens.windows(2) {
            self.add(&mut v, &format!("{} {}", pair[0], pair[1]), 0.5);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            // Only stopwords: fall back to hashing the raw text.
            self.add(&mut v, lowered.trim(), 1.0);
        }
        EmbeddingVector::new(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    pub endpoint: String,
    pub dim: usize,
    #[serde(default = "default_embed_timeout")]
    pub timeout_secs: u64,
}

fn default_embed_timeout() -> u64 {
    60
}

/// Remote embedder speaking `{texts:[...]} -> {vectors:[[...]]}`.
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| EmbedError::Provider(e.to_string()))?;
        Ok(HttpEmbedder { config, client })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let resp = self
            .client
            .post(&self.config.endpoint)
            .json(&json!({ "texts": [text] }))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| EmbedError::Provider(e.to_string()))?;
        let body: EmbedResponse = resp.json().map_err(|e| EmbedError::Provider(e.to_string()))?;
        let values = body
            .vectors
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::Provider("response has no vectors".into()))?;
        if values.len() != self.config.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.config.dim,
                got: values.len(),
            });
        }
        EmbeddingVector::new(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub vector: EmbeddingVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedup_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
    pub dedup_key: Option<String>,
}

/// Linear-scan vector index. Reads run concurrently; inserts take a write
/// lock.
#[derive(Debug)]
pub struct VectorIndex {
    dim: usize,
    entries: RwLock<Vec<IndexEntry>>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        VectorIndex {
            dim,
            entries: RwLock::new(Vec::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().is_empty()
    }

    pub fn insert(&self, entry: IndexEntry) -> Result<(), EmbedError> {
        if entry.vector.dim() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: entry.vector.dim(),
            });
        }
        let mut entries = self.entries.write();
        if entries.iter().any(|e| e.id == entry.id) {
            return Err(EmbedError::DuplicateId(entry.id));
        }
        entries.push(entry);
        Ok(())
    }

    /// Changes the dedup key of an existing entry.
    pub fn set_dedup_key(&self, id: &str, key: Option<String>) -> bool {
        let mut entries = self.entries.write();
        match entries.iter_mut().find(|e| e.id == id) {
            Some(e) => {
                e.dedup_key = key;
                true
            }
            None => false,
        }
    }

    pub fn get(&self, id: &str) -> Option<IndexEntry> {
        self.entries.read().iter().find(|e| e.id == id).cloned()
    }

    /// Up to `k` entries by ascending distance, ties kept in insertion order.
    /// With `dedup`, only the nearest entry of each dedup key survives.
    pub fn knn(&self, target: &EmbeddingVector, k: usize, dedup: bool) -> Vec<Neighbor> {
        self.knn_filtered(target, k, dedup, |_| true)
    }

    pub fn knn_filtered(
        &self,
        target: &EmbeddingVector,
        k: usize,
        dedup: bool,
        keep: impl Fn(&IndexEntry) -> bool,
    ) -> Vec<Neighbor> {
        let entries = self.entries.read();
        let mut scored: Vec<(f64, usize)> = entries
            .iter()
            .enumerate()
            .filter(|(_, e)| keep(e))
            .map(|(i, e)| (e.vector.distance(target), i))
            .collect();
        // Stable sort keeps insertion order among equal distances.
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(k.min(scored.len()));
        for (d, i) in scored {
            if out.len() >= k {
                break;
            }
            let e = &entries[i];
            if dedup {
                if let Some(key) = &e.dedup_key {
                    if !seen.insert(key.clone()) {
                        continue;
                    }
                }
            }
            out.push(Neighbor {
                id: e.id.clone(),
                distance: d,
                dedup_key: e.dedup_key.clone(),
            });
        }
        out
    }

    pub fn entries(&self) -> Vec<IndexEntry> {
        self.entries.read().clone()
    }
}

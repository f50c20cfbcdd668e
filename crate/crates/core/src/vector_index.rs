//! Unit-normalized embeddings, pluggable embedding providers and an exact
//! cosine top-k index.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::openai::{OpenAiEmbeddings, DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL};
use crate::provider::{CachedEmbedder, CallCache, Embedder, ProviderError, RetryPolicy};

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("index is empty")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("vector has zero norm or non-finite values")]
    Degenerate,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// L2-normalizes `values`.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, IndexError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::Degenerate);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(IndexError::Degenerate);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self { values })
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Cosine of two unit vectors, in [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, IndexError> {
    if a.dims() != b.dims() {
        return Err(IndexError::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    // Rounding can leave a vector's self-cosine a few ulps short of 1.
    if dot > 1.0 - 1e-9 && a.values == b.values {
        return Ok(1.0);
    }
    Ok(dot.clamp(-1.0, 1.0))
}

/// Cosine clamped to [0, 1], the form used by adherence thresholds.
pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, IndexError> {
    cosine(a, b).map(|c| c.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry<P> {
    pub key: String,
    pub payload: P,
    pub vector: EmbeddingVector,
}

/// Exact-search index. Immutable once built; safe to share across threads.
#[derive(Debug, Clone)]
pub struct VectorIndex<P> {
    dims: usize,
    entries: Vec<IndexEntry<P>>,
    positions: HashMap<String, usize>,
}

impl<P> VectorIndex<P> {
    pub fn new(dims: usize) -> Self {
        Self {
            dims,
            entries: Vec::new(),
            positions: HashMap::new(),
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: EmbeddingVector, payload: P) -> Result<(), IndexError> {
        let key = key.into();
        if vector.dims() != self.dims {
            return Err(IndexError::DimensionMismatch {
                left: self.dims,
                right: vector.dims(),
            });
        }
        if self.positions.contains_key(&key) {
            return Err(IndexError::DuplicateKey(key));
        }
        self.positions.insert(key.clone(), self.entries.len());
        self.entries.push(IndexEntry { key, payload, vector });
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&IndexEntry<P>> {
        self.positions.get(key).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[IndexEntry<P>] {
        &self.entries
    }

    /// The `k` best entries by cosine, best first; ties go to the smaller key.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<(&IndexEntry<P>, f64)>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if self.entries.is_empty() {
            return Err(IndexError::Empty);
        }
        if query.dims() != self.dims {
            return Err(IndexError::DimensionMismatch {
                left: self.dims,
                right: query.dims(),
            });
        }
        let mut scored: Vec<(&IndexEntry<P>, f64)> = self
            .entries
            .iter()
            .map(|e| (e, cosine(&e.vector, query).expect("dims checked on insert")))
            .collect();
        let order = |a: &(&IndexEntry<P>, f64), b: &(&IndexEntry<P>, f64)| -> Ordering {
            b.1.total_cmp(&a.1).then_with(|| a.0.key.cmp(&b.0.key))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored)
    }

    /// Like [`top_k`](Self::top_k) but returns owned `(key, score)` pairs.
    pub fn top_k_keys(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<(String, f64)>, IndexError> {
        Ok(self
            .top_k(query, k)?
            .into_iter()
            .map(|(e, s)| (e.key.clone(), s))
            .collect())
    }
}

impl<P: Serialize> VectorIndex<P> {
    /// JSON Lines, one `{key, payload, vector}` object per entry.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), IndexError> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e).map_err(|e| IndexError::Io(e.to_string()))?;
            out.write_all(b"\n").map_err(|e| IndexError::Io(e.to_string()))?;
        }
        Ok(())
    }
}

impl<P: DeserializeOwned> VectorIndex<P> {
    /// Reads an index written by [`write_jsonl`](Self::write_jsonl). An empty
    /// file yields an empty index of `empty_dims` dimensions.
    pub fn read_jsonl<R: BufRead>(input: R, empty_dims: usize) -> Result<Self, IndexError> {
        let mut index: Option<Self> = None;
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| IndexError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IndexEntry<P> = serde_json::from_str(&line).map_err(|e| IndexError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let idx = index.get_or_insert_with(|| Self::new(entry.vector.dims()));
            idx.insert(entry.key, entry.vector, entry.payload)?;
        }
        Ok(index.unwrap_or_else(|| Self::new(empty_dims)))
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased token with surrounding punctuation removed. Tokens made only of
/// punctuation are kept as-is so that every non-blank text has a token.
pub fn normalize_token(raw: &str) -> String {
    let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        raw.to_lowercase()
    } else {
        trimmed.to_lowercase()
    }
}

/// Bag-of-words embedder: each token adds 1 to coordinate `hash(token) mod dims`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    dims: usize,
}

impl HashedEmbedder {
    pub const DEFAULT_DIMS: usize = 256;

    pub fn new(dims: usize) -> Self {
        assert!(dims > 0, "hashed embedder needs at least one dimension");
        Self { dims }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(normalize_token(token).as_bytes()) % self.dims as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> Option<EmbeddingVector> {
        let mut counts = vec![0.0; self.dims];
        let mut any = false;
        for tok in text.split_whitespace() {
            counts[self.bucket(tok)] += 1.0;
            any = true;
        }
        if !any {
            return None;
        }
        EmbeddingVector::normalized(counts).ok()
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMS)
    }
}

impl Embedder for HashedEmbedder {
    fn id(&self) -> String {
        format!("hashed:{}", self.dims)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| self.embed_one(t).ok_or(ProviderError::EmptyInput(i)))
            .collect()
    }
}

fn default_dims() -> usize {
    HashedEmbedder::DEFAULT_DIMS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingProviderConfig {
    /// OpenAI-compatible `/embeddings` endpoint.
    Remote {
        model_id: String,
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default)]
        api_key_env: Option<String>,
    },
    Hashed {
        #[serde(default = "default_dims")]
        dims: usize,
    },
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self::Hashed { dims: default_dims() }
    }
}

impl EmbeddingProviderConfig {
    /// Instantiates the provider. Remote embedders are wrapped in the call
    /// cache when one is given; the hashed embedder is local and uncached.
    pub fn build(&self, cache: Option<Arc<CallCache>>, offline: bool) -> Result<Arc<dyn Embedder>, ProviderError> {
        match self {
            Self::Hashed { dims } => Ok(Arc::new(HashedEmbedder::new(*dims))),
            Self::Remote {
                model_id,
                endpoint,
                api_key_env,
            } => {
                let env = api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV);
                let api_key = std::env::var(env).ok();
                if api_key.is_none() && !offline {
                    return Err(ProviderError::MissingCredentials(env.to_string()));
                }
                let client = OpenAiEmbeddings::new(
                    endpoint.as_deref().unwrap_or(DEFAULT_BASE_URL),
                    model_id,
                    api_key,
                    RetryPolicy::default(),
                );
                Ok(match cache {
                    Some(c) => Arc::new(CachedEmbedder::new(client, c, offline)),
                    None => Arc::new(client),
                })
            }
        }
    }
}

/// One unit vector per input text, in input order. Blank texts are rejected
/// before any provider call.
pub fn embed(texts: &[&str], embedder: &dyn Embedder) -> Result<Vec<EmbeddingVector>, ProviderError> {
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(ProviderError::EmptyInput(i));
    }
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    embedder.embed(texts)
}

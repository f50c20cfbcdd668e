//! Model provider plumbing: the embedder and generator traits, bounded
//! retries with exponential backoff, and the on-disk call cache.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::vector_index::EmbeddingVector;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("{provider}: request failed after {attempts} attempt(s): {message}")]
    Exhausted {
        provider: String,
        attempts: u32,
        message: String,
    },
    #[error("{provider}: request rejected (status {status:?}): {message}")]
    Rejected {
        provider: String,
        status: Option<u16>,
        message: String,
    },
    #[error("{0}: empty completion")]
    EmptyCompletion(String),
    #[error("empty input text at position {0}")]
    EmptyInput(usize),
    #[error("{provider}: malformed response: {message}")]
    Malformed { provider: String, message: String },
    #[error("offline: no cached response for request {0}")]
    OfflineMiss(String),
    #[error("scripted provider {model}: no response for request {key}")]
    Unscripted { model: String, key: String },
    #[error("missing credentials: environment variable {0} is not set")]
    MissingCredentials(String),
    #[error("cache i/o: {0}")]
    Cache(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// One chat-completion call. Field order is part of the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
}

impl ChatRequest {
    /// Content hash used by the call cache and by scripted providers.
    pub fn content_hash(&self) -> String {
        content_hash("chat", self)
    }

    /// Text of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Unix seconds reported by the provider.
    pub created: i64,
}

pub trait Generator: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError>;
}

pub trait Embedder: Send + Sync {
    /// Stable identifier; part of every embedding cache key.
    fn id(&self) -> String;
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

impl<T: Generator + ?Sized> Generator for Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        (**self).complete(request)
    }
}

impl<T: Embedder + ?Sized> Embedder for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        (**self).embed(texts)
    }
}

/// SHA-256 over a namespace tag and the canonical JSON of `value`.
pub fn content_hash<T: Serialize + ?Sized>(namespace: &str, value: &T) -> String {
    let mut h = Sha256::new();
    h.update(namespace.as_bytes());
    h.update([0u8]);
    h.update(serde_json::to_vec(value).expect("request types serialize"));
    hex::encode(h.finalize())
}

/// Outcome of a single attempt inside [`RetryPolicy::run`].
#[derive(Debug)]
pub enum AttemptError {
    /// Transport failure, rate limit or server error; worth retrying.
    Transient(String),
    Fatal(ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        // attempt is 1-based; no wait before the first one.
        if attempt <= 1 {
            return Duration::ZERO;
        }
        let factor = 1u64 << (attempt - 2).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }

    pub fn run<T>(
        &self,
        provider: &str,
        mut attempt_fn: impl FnMut(u32) -> Result<T, AttemptError>,
    ) -> Result<T, ProviderError> {
        let max = self.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max {
            let wait = self.delay_before(attempt);
            if !wait.is_zero() {
                thread::sleep(wait);
            }
            match attempt_fn(attempt) {
                Ok(v) => return Ok(v),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(msg)) => {
                    tracing::warn!(provider, attempt, "transient failure: {msg}");
                    last = msg;
                }
            }
        }
        Err(ProviderError::Exhausted {
            provider: provider.to_string(),
            attempts: max,
            message: last,
        })
    }
}

/// Directory-backed map from request hash to response bytes.
///
/// Entries are written to a temporary file and renamed into place, so a
/// reader never observes a partial entry.
#[derive(Debug)]
pub struct CallCache {
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl CallCache {
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("__");
        self.dir.join(shard).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.path_for(key)) {
            Ok(bytes) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Ok(Some(bytes))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, key: &str, bytes: &[u8]) -> io::Result<()> {
        let path = self.path_for(key);
        if path.exists() {
            return Ok(());
        }
        let parent = path.parent().expect("cache path has a shard directory");
        fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Number of stored entries.
    pub fn len(&self) -> io::Result<usize> {
        let mut n = 0;
        for shard in fs::read_dir(&self.dir)? {
            let shard = shard?;
            if shard.file_type()?.is_dir() {
                n += fs::read_dir(shard.path())?
                    .filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count();
            }
        }
        Ok(n)
    }

    pub fn is_empty(&self) -> io::Result<bool> {
        Ok(self.len()? == 0)
    }
}

/// Generator wrapper that serves repeated requests from a [`CallCache`].
pub struct CachedGenerator<G> {
    inner: G,
    cache: Arc<CallCache>,
    offline: bool,
    upstream_calls: AtomicU64,
}

impl<G: Generator> CachedGenerator<G> {
    pub fn new(inner: G, cache: Arc<CallCache>, offline: bool) -> Self {
        Self {
            inner,
            cache,
            offline,
            upstream_calls: AtomicU64::new(0),
        }
    }

    /// Requests forwarded to the wrapped provider.
    pub fn upstream_calls(&self) -> u64 {
        self.upstream_calls.load(Ordering::Relaxed)
    }
}

impl<G: Generator> Generator for CachedGenerator<G> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        let key = request.content_hash();
        if let Some(bytes) = self.cache.get(&key)? {
            if let Ok(hit) = serde_json::from_slice(&bytes) {
                return Ok(hit);
            }
        }
        if self.offline {
            return Err(ProviderError::OfflineMiss(key));
        }
        self.upstream_calls.fetch_add(1, Ordering::Relaxed);
        let completion = self.inner.complete(request)?;
        let bytes = serde_json::to_vec(&completion).expect("completion serializes");
        self.cache.put(&key, &bytes)?;
        Ok(completion)
    }
}

/// Embedder wrapper caching one entry per (embedder id, text).
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Arc<CallCache>,
    offline: bool,
    upstream_calls: AtomicU64,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E, cache: Arc<CallCache>, offline: bool) -> Self {
        Self {
            inner,
            cache,
            offline,
            upstream_calls: AtomicU64::new(0),
        }
    }

    pub fn upstream_calls(&self) -> u64 {
        self.upstream_calls.load(Ordering::Relaxed)
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let id = self.inner.id();
        let keys: Vec<String> = texts.iter().map(|t| content_hash("embed", &(&id, t))).collect();
        let mut out: Vec<Option<EmbeddingVector>> = Vec::with_capacity(texts.len());
        let mut missing = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            let hit = self
                .cache
                .get(key)?
                .and_then(|b| serde_json::from_slice::<EmbeddingVector>(&b).ok());
            if hit.is_none() {
                missing.push(i);
            }
            out.push(hit);
        }
        if !missing.is_empty() {
            if self.offline {
                return Err(ProviderError::OfflineMiss(keys[missing[0]].clone()));
            }
            self.upstream_calls.fetch_add(1, Ordering::Relaxed);
            let batch: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
            let fresh = self.inner.embed(&batch)?;
            for (&i, v) in missing.iter().zip(fresh) {
                let bytes = serde_json::to_vec(&v).expect("vector serializes");
                self.cache.put(&keys[i], &bytes)?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Counting {
        calls: Mutex<u32>,
    }

    impl Generator for Counting {
        fn model_id(&self) -> &str {
            "counting"
        }
        fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
            *self.calls.lock().unwrap() += 1;
            Ok(Completion {
                text: format!("echo: {}", request.prompt()),
                created: 7,
            })
        }
    }

    fn request(prompt: &str) -> ChatRequest {
        ChatRequest {
            model: "counting".into(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: 0.5,
            top_p: 0.0,
        }
    }

    #[test]
    fn second_identical_request_is_a_cache_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(CallCache::open(dir.path()).unwrap());
        let g = CachedGenerator::new(Counting { calls: Mutex::new(0) }, cache.clone(), false);
        let a = g.complete(&request("hi")).unwrap();
        let b = g.complete(&request("hi")).unwrap();
        assert_eq!(a, b);
        assert_eq!(g.upstream_calls(), 1);
        assert_eq!(cache.len().unwrap(), 1);
        g.complete(&request("other")).unwrap();
        assert_eq!(g.upstream_calls(), 2);
    }

    #[test]
    fn offline_miss_is_an_error_and_hit_is_served() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(CallCache::open(dir.path()).unwrap());
        CachedGenerator::new(Counting { calls: Mutex::new(0) }, cache.clone(), false)
            .complete(&request("warm"))
            .unwrap();
        let offline = CachedGenerator::new(Counting { calls: Mutex::new(0) }, cache, true);
        assert_eq!(offline.complete(&request("warm")).unwrap().text, "echo: warm");
        assert!(matches!(
            offline.complete(&request("cold")),
            Err(ProviderError::OfflineMiss(_))
        ));
        assert_eq!(offline.upstream_calls(), 0);
    }

    #[test]
    fn hash_depends_on_decoding() {
        let a = request("x");
        let mut b = a.clone();
        b.temperature = 0.0;
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), request("x").content_hash());
    }

    #[test]
    fn retry_gives_up_after_max_attempts() {
        let policy = RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 1,
            max_delay_ms: 2,
        };
        let mut seen = 0;
        let r: Result<(), _> = policy.run("p", |_| {
            seen += 1;
            Err(AttemptError::Transient("503".into()))
        });
        assert_eq!(seen, 3);
        assert!(matches!(r, Err(ProviderError::Exhausted { attempts: 3, .. })));
    }

    #[test]
    fn retry_recovers_and_fatal_stops() {
        let policy = RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 1,
            max_delay_ms: 1,
        };
        let r = policy.run("p", |a| if a < 3 { Err(AttemptError::Transient("x".into())) } else { Ok(a) });
        assert_eq!(r.unwrap(), 3);
        let mut seen = 0;
        let r: Result<(), _> = policy.run("p", |_| {
            seen += 1;
            Err(AttemptError::Fatal(ProviderError::EmptyCompletion("p".into())))
        });
        assert_eq!(seen, 1);
        assert!(r.is_err());
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_before(1), Duration::ZERO);
        assert_eq!(p.delay_before(2), Duration::from_millis(500));
        assert_eq!(p.delay_before(3), Duration::from_millis(1000));
        assert_eq!(p.delay_before(30), Duration::from_millis(8000));
    }
}

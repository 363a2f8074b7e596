//! Utterance-level sentence embeddings for the conversation history encoder.
//!
//! Providers are pluggable. [`HashEmbeddingProvider`] is deterministic and
//! offline; [`HttpEmbeddingProvider`] talks to an external sentence-embedding
//! service. [`CachedEmbedder`] puts a memory cache and an optional on-disk
//! content-addressed cache in front of either.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::Utterance;
use crate::error::{Error, Result};

pub const EMBEDDING_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceEmbedding(Vec<f32>);

impl UtteranceEmbedding {
    pub fn new(vector: Vec<f32>) -> Result<Self> {
        if vector.len() != EMBEDDING_DIM {
            return Err(Error::Shape(format!(
                "embedding has dimension {}, expected {EMBEDDING_DIM}",
                vector.len()
            )));
        }
        if let Some(i) = vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("embedding entry {i} is not finite")));
        }
        Ok(Self(vector))
    }

    pub fn zeros() -> Self {
        Self(vec![0.0; EMBEDDING_DIM])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier; part of every cache key.
    fn id(&self) -> &str;
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
}

/// Seeded hash-to-vector function.
///
/// Entry `i` takes the first 8 bytes of
/// `SHA-256(seed as u64 LE || i as u32 LE || text as UTF-8)` as a little-endian
/// `u64`, keeps its top 53 bits and maps them uniformly to `[-1, 1)`.
pub fn hash_embedding(seed: u64, text: &str) -> Vec<f32> {
    (0..EMBEDDING_DIM as u32)
        .map(|i| {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(i.to_le_bytes());
            h.update(text.as_bytes());
            let digest = h.finalize();
            let u = u64::from_le_bytes(digest[..8].try_into().unwrap());
            let unit = (u >> 11) as f64 / (1u64 << 53) as f64;
            (unit * 2.0 - 1.0) as f32
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct HashEmbeddingProvider {
    seed: u64,
    id: String,
}

impl HashEmbeddingProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            id: format!("hash-{seed}"),
        }
    }
}

impl EmbeddingProvider for HashEmbeddingProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        Ok(hash_embedding(self.seed, text))
    }
}

/// Client for an HTTP sentence-embedding service.
///
/// Sends `POST <url>` with body `{"text": "..."}` and accepts either a bare
/// JSON array of floats or `{"embedding": [...]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbeddingProvider {
    url: String,
    id: String,
    retries: u32,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ServiceResponse {
    Bare(Vec<f32>),
    Wrapped { embedding: Vec<f32> },
}

impl HttpEmbeddingProvider {
    pub fn new(url: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        let url = url.into();
        Self {
            id: format!("http:{url}"),
            url,
            retries,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    fn request(&self, text: &str) -> std::result::Result<Vec<f32>, String> {
        let body = serde_json::json!({ "text": text }).to_string();
        let resp = self
            .agent
            .post(&self.url)
            .set("Content-Type", "application/json")
            .send_string(&body)
            .map_err(|e| e.to_string())?;
        let text = resp.into_string().map_err(|e| e.to_string())?;
        match serde_json::from_str::<ServiceResponse>(&text).map_err(|e| e.to_string())? {
            ServiceResponse::Bare(v) | ServiceResponse::Wrapped { embedding: v } => Ok(v),
        }
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.request(text) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("embedding request {}/{attempts} failed: {e}", attempt + 1);
                    last = e;
                    if attempt + 1 < attempts {
                        std::thread::sleep(Duration::from_millis(50 << attempt.min(5)));
                    }
                }
            }
        }
        Err(Error::ProviderUnavailable {
            provider: self.id.clone(),
            attempts,
            message: last,
        })
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Memoizing front end over an [`EmbeddingProvider`].
///
/// Disk entries are `<hex sha256(provider id + "\0" + text)>.f32`, 512
/// little-endian `f32` values. New entries are written to a temporary file and
/// renamed into place, so concurrent readers never see partial files.
pub struct CachedEmbedder {
    provider: Arc<dyn EmbeddingProvider>,
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, Arc<UtteranceEmbedding>>>,
}

impl CachedEmbedder {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, dir: Option<PathBuf>) -> Self {
        Self {
            provider,
            dir,
            memory: RwLock::new(HashMap::new()),
        }
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn cache_key(provider_id: &str, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(provider_id.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    /// Embedding of the utterance's text; `None` (conversation padding) maps to zeros.
    pub fn embed_utterance(&self, u: Option<&Utterance>) -> Result<Arc<UtteranceEmbedding>> {
        match u {
            None => Ok(Arc::new(UtteranceEmbedding::zeros())),
            Some(u) => self.embed_text(&u.text()),
        }
    }

    pub fn embed_text(&self, text: &str) -> Result<Arc<UtteranceEmbedding>> {
        let key = Self::cache_key(self.provider.id(), text);
        if let Some(hit) = self.memory.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let emb = match self.read_disk(&key)? {
            Some(e) => e,
            None => {
                let e = UtteranceEmbedding::new(self.provider.embed(text)?)?;
                self.write_disk(&key, &e)?;
                e
            }
        };
        let emb = Arc::new(emb);
        self.memory.write().unwrap().insert(key, emb.clone());
        Ok(emb)
    }

    fn entry_path(dir: &Path, key: &str) -> PathBuf {
        dir.join(format!("{key}.f32"))
    }

    fn read_disk(&self, key: &str) -> Result<Option<UtteranceEmbedding>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = Self::entry_path(dir, key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        if bytes.len() != EMBEDDING_DIM * 4 {
            return Err(Error::Validation(format!(
                "cache entry {} has {} bytes, expected {}",
                path.display(),
                bytes.len(),
                EMBEDDING_DIM * 4
            )));
        }
        let v = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        UtteranceEmbedding::new(v).map(Some)
    }

    fn write_disk(&self, key: &str, e: &UtteranceEmbedding) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
        let path = Self::entry_path(dir, key);
        let tmp = dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut bytes = Vec::with_capacity(EMBEDDING_DIM * 4);
        for v in e.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(&tmp).map_err(|err| Error::io(&tmp, err))?;
        f.write_all(&bytes).map_err(|err| Error::io(&tmp, err))?;
        drop(f);
        fs::rename(&tmp, &path).map_err(|err| Error::io(&path, err))
    }
}

//! Text embedding backends.
//!
//! Two providers share the [`Embedder`] trait: a deterministic local hashing
//! embedder that needs no network and a remote HTTP embedder for hosted
//! models. All embedders produce unit-norm `f32` vectors; every dot product
//! over them is therefore a cosine similarity.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::transport::{HttpJson, RetryPolicy};
use crate::util::parallel_map_ordered;

/// Unit-norm embedding vector. Values are stored as `f32`; similarity math
/// accumulates in `f64` to keep ranking stable across platforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Dot product with `f64` accumulation. For unit-norm inputs this is
    /// the cosine similarity.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| *v as f64 * *v as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// True when the L2 norm is within `tol` of 1.0.
    pub fn is_unit_norm(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }
}

/// Which embedding backend to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedProvider {
    DeterministicLocal,
    RemoteHttp,
}

/// Declarative description of an embedder, loadable from config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSpec {
    pub provider: EmbedProvider,
    pub model_id: String,
    pub dim: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_batch_size() -> usize {
    32
}

impl EmbedderSpec {
    /// Local hashing embedder spec with sensible defaults.
    pub fn deterministic(model_id: impl Into<String>, dim: usize) -> Self {
        Self {
            provider: EmbedProvider::DeterministicLocal,
            model_id: model_id.into(),
            dim,
            endpoint: None,
            batch_size: default_batch_size(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_id.trim().is_empty() {
            return Err(Error::Config("embedder model_id must not be empty".into()));
        }
        if self.dim < 8 {
            return Err(Error::Config(format!(
                "embedding dim must be at least 8, got {}",
                self.dim
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("embedder batch_size must be positive".into()));
        }
        if self.provider == EmbedProvider::RemoteHttp && self.endpoint.is_none() {
            return Err(Error::Config(
                "remote_http embedder requires an endpoint".into(),
            ));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint {
            model_id: self.model_id.clone(),
            dim: self.dim,
        }
    }
}

/// Identity of an embedding space. Vectors from different fingerprints are
/// never comparable; index loading enforces a match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub model_id: String,
    pub dim: usize,
}

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.model_id, self.dim)
    }
}

/// Role of a text in retrieval. Some hosted models expect a role prefix;
/// both built-in providers embed queries and passages identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextRole {
    Query,
    Passage,
}

/// An embedding backend. `embed_batch` must be order-preserving and must
/// behave identically regardless of how inputs are split into batches.
pub trait Embedder: Send + Sync {
    fn fingerprint(&self) -> Fingerprint;

    fn embed_batch(&self, texts: &[&str], role: TextRole) -> Result<Vec<EmbeddingVector>>;

    fn embed_one(&self, text: &str, role: TextRole) -> Result<EmbeddingVector> {
        let mut out = self.embed_batch(&[text], role)?;
        out.pop().ok_or(Error::Config(
            "embedder returned no vector for a single input".into(),
        ))
    }
}

/// Batch precondition shared by all providers: every text must survive a
/// whitespace trim. Offenders are reported together with their indices.
fn check_batch_nonempty(texts: &[&str]) -> Result<()> {
    let items: Vec<(usize, String)> = texts
        .iter()
        .enumerate()
        .filter(|(_, t)| t.trim().is_empty())
        .map(|(i, _)| (i, "empty text".to_string()))
        .collect();
    if items.is_empty() {
        Ok(())
    } else {
        Err(Error::BatchItems { items })
    }
}

const FNV_OFFSET_BASIS: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET_BASIS;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic hashing embedder.
///
/// Features are the lowercased alphanumeric words of the text (unigrams,
/// weight 1.0) plus adjacent word pairs joined with a single space (bigrams,
/// weight 0.5). Each feature is FNV-1a-hashed; the hash picks a bucket
/// (`hash % dim`) and a sign (bit 63 set means negative). Accumulation and
/// normalization run in `f64` before the final cast to `f32`. A text with no
/// alphanumeric content maps to the first basis vector so the output is
/// always unit-norm.
///
/// Panics if `dim < 8`; construct through a validated [`EmbedderSpec`].
pub fn deterministic_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim >= 8, "embedding dim must be at least 8");
    let lowered = text.to_lowercase();
    let words: Vec<&str> = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();

    let mut acc = vec![0.0f64; dim];
    let mut any = false;
    let mut add = |feature: &str, weight: f64| {
        let h = fnv1a64(feature.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        acc[bucket] += sign * weight;
        any = true;
    };

    for w in &words {
        add(w, 1.0);
    }
    for pair in words.windows(2) {
        add(&format!("{} {}", pair[0], pair[1]), 0.5);
    }

    if !any {
        acc[0] = 1.0;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    let values = if norm == 0.0 {
        let mut v = vec![0.0f32; dim];
        v[0] = 1.0;
        v
    } else {
        acc.iter().map(|v| (v / norm) as f32).collect()
    };
    EmbeddingVector { values }
}

/// Local embedder wrapping [`deterministic_embed`].
pub struct DeterministicEmbedder {
    spec: EmbedderSpec,
}

impl DeterministicEmbedder {
    pub fn new(spec: EmbedderSpec) -> Result<Self> {
        spec.validate()?;
        if spec.provider != EmbedProvider::DeterministicLocal {
            return Err(Error::Config(
                "DeterministicEmbedder requires provider deterministic_local".into(),
            ));
        }
        Ok(Self { spec })
    }
}

impl Embedder for DeterministicEmbedder {
    fn fingerprint(&self) -> Fingerprint {
        self.spec.fingerprint()
    }

    fn embed_batch(&self, texts: &[&str], _role: TextRole) -> Result<Vec<EmbeddingVector>> {
        check_batch_nonempty(texts)?;
        Ok(texts
            .iter()
            .map(|t| deterministic_embed(t, self.spec.dim))
            .collect())
    }
}

/// Remote embedder posting `{"model": ..., "input": [...]}` and expecting
/// `{"data": [{"index": i, "embedding": [...]}]}` back. Responses are
/// reordered by `index`, so out-of-order server replies are fine.
pub struct RemoteHttpEmbedder {
    spec: EmbedderSpec,
    api_key: Option<String>,
    transport: Arc<dyn HttpJson>,
    retry: RetryPolicy,
    parallelism: usize,
}

impl RemoteHttpEmbedder {
    pub fn new(
        spec: EmbedderSpec,
        api_key: Option<String>,
        transport: Arc<dyn HttpJson>,
        retry: RetryPolicy,
        parallelism: usize,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.provider != EmbedProvider::RemoteHttp {
            return Err(Error::Config(
                "RemoteHttpEmbedder requires provider remote_http".into(),
            ));
        }
        Ok(Self {
            spec,
            api_key,
            transport,
            retry,
            parallelism: parallelism.max(1),
        })
    }

    fn embed_chunk(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let endpoint = self.spec.endpoint.as_deref().expect("validated endpoint");
        let body = json!({
            "model": self.spec.model_id,
            "input": texts,
        });
        let resp = self.retry.post_json_with_retry(
            self.transport.as_ref(),
            endpoint,
            self.api_key.as_deref(),
            &body,
        )?;

        let data = resp
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| Error::Config("embedding response missing data array".into()))?;
        if data.len() != texts.len() {
            return Err(Error::Config(format!(
                "embedding response returned {} vectors for {} inputs",
                data.len(),
                texts.len()
            )));
        }

        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for item in data {
            let index = item
                .get("index")
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::Config("embedding response item missing index".into()))?
                as usize;
            if index >= texts.len() || out[index].is_some() {
                return Err(Error::Config(format!(
                    "embedding response has bad or duplicate index {index}"
                )));
            }
            let raw = item
                .get("embedding")
                .and_then(|v| v.as_array())
                .ok_or_else(|| Error::Config("embedding response item missing embedding".into()))?;
            let values: Vec<f32> = raw
                .iter()
                .map(|v| v.as_f64().map(|f| f as f32))
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| Error::Config("embedding response has non-numeric values".into()))?;
            if values.len() != self.spec.dim {
                return Err(Error::DimMismatch {
                    expected: self.spec.dim,
                    got: values.len(),
                });
            }
            out[index] = Some(EmbeddingVector { values });
        }
        Ok(out.into_iter().map(|v| v.expect("all indices filled")).collect())
    }
}

impl Embedder for RemoteHttpEmbedder {
    fn fingerprint(&self) -> Fingerprint {
        self.spec.fingerprint()
    }

    fn embed_batch(&self, texts: &[&str], _role: TextRole) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        check_batch_nonempty(texts)?;
        let chunks: Vec<&[&str]> = texts.chunks(self.spec.batch_size).collect();
        let results = parallel_map_ordered(&chunks, self.parallelism, |_, chunk| {
            self.embed_chunk(chunk)
        });
        let mut out = Vec::with_capacity(texts.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }
}

/// Build an embedder from its spec. The remote provider requires the
/// `EMBED_API_KEY` environment variable before any network traffic; keys
/// never live in config files.
pub fn embedder_from_spec(
    spec: &EmbedderSpec,
    transport: Arc<dyn HttpJson>,
    parallelism: usize,
) -> Result<Box<dyn Embedder>> {
    spec.validate()?;
    match spec.provider {
        EmbedProvider::DeterministicLocal => {
            Ok(Box::new(DeterministicEmbedder::new(spec.clone())?))
        }
        EmbedProvider::RemoteHttp => {
            let api_key = std::env::var("EMBED_API_KEY").map_err(|_| {
                Error::Config(
                    "EMBED_API_KEY environment variable not set (required for remote_http)"
                        .into(),
                )
            })?;
            Ok(Box::new(RemoteHttpEmbedder::new(
                spec.clone(),
                Some(api_key),
                transport,
                RetryPolicy::default(),
                parallelism,
            )?))
        }
    }
}

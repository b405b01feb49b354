//! Embedding providers behind one trait.
//!
//! [`TermFrequencyEmbedder`] is the deterministic offline provider used by
//! tests: lowercase word tokens hashed into a 2^20-dimensional sparse
//! term-frequency vector. [`HttpEmbedder`] talks to an OpenAI-style
//! `/embeddings` endpoint. [`CachedEmbedder`] pins one vector per input
//! string for the lifetime of the process.

use std::collections::HashMap;
use std::time::Duration;

use parking_lot::Mutex;
use serde::Deserialize;

use crate::metrics::MetricsError;

/// Sparse real vector; components sorted by index, zeros omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    dim: usize,
    components: Vec<(u32, f64)>,
}

impl EmbeddingVector {
    pub fn dense(values: Vec<f64>) -> Result<Self, MetricsError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
        let dim = values.len();
        let components = values
            .into_iter()
            .enumerate()
            .filter(|(_, v)| *v != 0.0)
            .map(|(i, v)| (i as u32, v))
            .collect();
        Ok(Self { dim, components })
    }

    pub fn sparse(dim: usize, mut components: Vec<(u32, f64)>) -> Result<Self, MetricsError> {
        if components.iter().any(|(_, v)| !v.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
        components.sort_by_key(|(i, _)| *i);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(components.len());
        for (i, v) in components {
            if i as usize >= dim {
                return Err(MetricsError::DimensionMismatch {
                    left: dim,
                    right: i as usize + 1,
                });
            }
            match merged.last_mut() {
                Some((j, acc)) if *j == i => *acc += v,
                _ => merged.push((i, v)),
            }
        }
        merged.retain(|(_, v)| *v != 0.0);
        Ok(Self {
            dim,
            components: merged,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[(u32, f64)] {
        &self.components
    }

    pub fn dot(&self, other: &Self) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.components, &other.components);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.components
            .iter()
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Cosine similarity; 0 when either vector is zero.
    pub fn cosine(&self, other: &Self) -> Result<f64, MetricsError> {
        if self.dim != other.dim {
            return Err(MetricsError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return Ok(0.0);
        }
        Ok(self.dot(other) / denom)
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, MetricsError>;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TermFrequencyEmbedder;

impl TermFrequencyEmbedder {
    pub const DIM: usize = 1 << 20;

    /// Lowercased alphanumeric runs. A string with no such run is one token.
    pub fn tokens(text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        let tokens: Vec<String> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect();
        if tokens.is_empty() {
            vec![lower.split_whitespace().collect::<Vec<_>>().join(" ")]
        } else {
            tokens
        }
    }

    fn bucket(token: &str) -> u32 {
        // FNV-1a, stable across platforms and runs.
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in token.bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        (hash % Self::DIM as u64) as u32
    }
}

impl Embedder for TermFrequencyEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, MetricsError> {
        if text.trim().is_empty() {
            return Err(MetricsError::EmptyText);
        }
        let components = Self::tokens(text)
            .iter()
            .map(|t| (Self::bucket(t), 1.0))
            .collect();
        EmbeddingVector::sparse(Self::DIM, components)
    }

    fn name(&self) -> &str {
        "term-frequency"
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedderConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

/// Client for an OpenAI-compatible `POST {base_url}/embeddings` endpoint.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    config: HttpEmbedderConfig,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Result<Self, MetricsError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| MetricsError::ProviderUnavailable(e.to_string()))?;
        Ok(Self { client, config })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, MetricsError> {
        if text.trim().is_empty() {
            return Err(MetricsError::EmptyText);
        }
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let mut request = self.client.post(url).json(&serde_json::json!({
            "model": self.config.model,
            "input": text,
        }));
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| MetricsError::ProviderUnavailable(e.to_string()))?;
        let body: EmbeddingResponse = response
            .json()
            .map_err(|e| MetricsError::ProviderUnavailable(format!("bad embedding body: {e}")))?;
        let datum = body
            .data
            .into_iter()
            .next()
            .ok_or_else(|| MetricsError::ProviderUnavailable("empty embedding list".into()))?;
        EmbeddingVector::dense(datum.embedding)
    }

    fn name(&self) -> &str {
        &self.config.model
    }
}

/// Memoizes another embedder so repeated strings get identical vectors.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().len()
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, MetricsError> {
        if let Some(v) = self.cache.lock().get(text) {
            return Ok(v.clone());
        }
        // The lock is not held across the provider call.
        let v = self.inner.embed(text)?;
        Ok(self
            .cache
            .lock()
            .entry(text.to_owned())
            .or_insert(v)
            .clone())
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fallback_is_deterministic() {
        let e = TermFrequencyEmbedder;
        assert_eq!(e.embed("abc").unwrap(), e.embed("abc").unwrap());
        assert_eq!(e.embed(""), Err(MetricsError::EmptyText));
        assert_eq!(e.embed("  "), Err(MetricsError::EmptyText));
    }

    #[test]
    fn punctuation_only_text_still_embeds() {
        let e = TermFrequencyEmbedder;
        let v = e.embed("?!").unwrap();
        assert!((v.cosine(&v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sparse_merges_duplicates() {
        let v = EmbeddingVector::sparse(8, vec![(3, 1.0), (1, 2.0), (3, 1.0)]).unwrap();
        assert_eq!(v.components(), &[(1, 2.0), (3, 2.0)]);
        assert!(EmbeddingVector::sparse(2, vec![(2, 1.0)]).is_err());
        assert_eq!(EmbeddingVector::dense(vec![1.0, f64::NAN]), Err(MetricsError::NonFinite));
    }

    #[test]
    fn cosine_of_dense_vectors() {
        let a = EmbeddingVector::dense(vec![1.0, 0.0]).unwrap();
        let b = EmbeddingVector::dense(vec![-1.0, 0.0]).unwrap();
        let z = EmbeddingVector::dense(vec![0.0, 0.0]).unwrap();
        assert_eq!(a.cosine(&b).unwrap(), -1.0);
        assert_eq!(a.cosine(&z).unwrap(), 0.0);
        let c = EmbeddingVector::dense(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(a.cosine(&c).is_err());
    }

    #[test]
    fn remote_outage_is_provider_unavailable() {
        let e = HttpEmbedder::new(HttpEmbedderConfig {
            base_url: "http://127.0.0.1:1".into(),
            model: "m".into(),
            api_key: None,
            timeout: Duration::from_millis(500),
        })
        .unwrap();
        assert!(matches!(e.embed("abc"), Err(MetricsError::ProviderUnavailable(_))));
    }

    #[test]
    fn cache_pins_vectors() {
        let e = CachedEmbedder::new(TermFrequencyEmbedder);
        let a = e.embed("same").unwrap();
        let b = e.embed("same").unwrap();
        assert_eq!(a, b);
        assert_eq!(e.cached_len(), 1);
    }
}

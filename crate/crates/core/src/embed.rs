//! Text embedders. Indexing and querying must go through the same instance.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 768;

/// Seed mixed into every feature hash of [`HashingEmbedder`].
pub const HASH_SEED: u64 = 0x5EED_00B5;

/// A fixed-length vector of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidRequest("embedding has zero dimensions".into()));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidRequest("embedding contains non-finite values".into()));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt()
    }

    /// Scales to unit L2 norm; the zero vector is left as is.
    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            for x in &mut self.values {
                *x = (f64::from(*x) / norm) as f32;
            }
        }
        self
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.values, &other.values)
    }
}

/// Inner product accumulated in f64, in index order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

/// Signed feature hashing of word 3-grams and character 4-grams, followed by
/// L2 normalization. Deterministic across runs and platforms.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder { dim }
    }

    fn accumulate(&self, namespace: u8, feature: &[u8], acc: &mut [f64]) {
        let h = feature_hash(namespace, feature);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        acc[bucket] += sign;
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(DEFAULT_DIM)
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let words = tokenize(text);
        let mut acc = vec![0.0f64; self.dim];
        if words.is_empty() {
            return Ok(EmbeddingVector::zeros(self.dim));
        }

        // Fewer than three words still yields one word feature.
        let n = words.len().min(3);
        for gram in words.windows(n) {
            self.accumulate(b'w', gram.join(" ").as_bytes(), &mut acc);
        }

        let padded: Vec<char> = format!(" {} ", words.join(" ")).chars().collect();
        for gram in padded.windows(4) {
            let s: String = gram.iter().collect();
            self.accumulate(b'c', s.as_bytes(), &mut acc);
        }

        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        let values = if norm > 0.0 {
            acc.iter().map(|x| (x / norm) as f32).collect()
        } else {
            vec![0.0; self.dim]
        };
        Ok(EmbeddingVector { values })
    }
}

/// Lowercased alphanumeric runs.
fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn feature_hash(namespace: u8, bytes: &[u8]) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET ^ HASH_SEED;
    for &b in std::iter::once(&namespace).chain(bytes) {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    // splitmix64 finalizer spreads FNV's weak low bits before the modulo.
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f32>,
}

/// Client for an HTTP embedding service: `POST {"text": ...}` answered by
/// `{"embedding": [...]}`. Results are L2-normalized like the local embedder.
pub struct RemoteEmbedder {
    endpoint: String,
    token: Option<String>,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, dim: usize) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Adapter(e.to_string()))?;
        Ok(RemoteEmbedder {
            endpoint: endpoint.into(),
            token,
            dim,
            client,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut req = self.client.post(&self.endpoint).json(&EmbedRequest { text });
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| Error::Adapter(format!("embed request failed: {e}")))?;
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| Error::Adapter(format!("embed response: {e}")))?;
        if body.embedding.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: body.embedding.len(),
            });
        }
        Ok(EmbeddingVector::new(body.embedding)
            .map_err(|e| Error::Adapter(e.to_string()))?
            .normalized())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
        a.dot(b) / (a.norm() * b.norm())
    }

    #[test]
    fn deterministic() {
        let e = HashingEmbedder::default();
        assert_eq!(e.embed("abc").unwrap(), e.embed("abc").unwrap());
        assert_eq!(e.embed("abc").unwrap().dim(), DEFAULT_DIM);
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let e = HashingEmbedder::default();
        let v = e.embed("").unwrap();
        assert_eq!(v.norm(), 0.0);
        assert_eq!(e.embed("  ,. ").unwrap().norm(), 0.0);
    }

    #[test]
    fn unit_norm() {
        let e = HashingEmbedder::new(64);
        for text in ["a", "return the red shirt", "x y z w v u"] {
            let n = e.embed(text).unwrap().norm();
            assert!((n - 1.0).abs() < 1e-6, "{text}: {n}");
        }
    }

    #[test]
    fn related_texts_are_closer() {
        let e = HashingEmbedder::default();
        let a = e.embed("return the red shirt").unwrap();
        let b = e.embed("refund the red shirt").unwrap();
        let c = e.embed("quantum flux capacitor").unwrap();
        assert!(cosine(&a, &b) > cosine(&a, &c));
    }

    #[test]
    fn case_and_punctuation_insensitive() {
        let e = HashingEmbedder::default();
        assert_eq!(
            e.embed("Cancel the ORDER!").unwrap(),
            e.embed("cancel the order").unwrap()
        );
    }

    #[test]
    fn vector_validation() {
        assert!(EmbeddingVector::new(vec![]).is_err());
        assert!(EmbeddingVector::new(vec![1.0, f32::NAN]).is_err());
        let v = EmbeddingVector::new(vec![3.0, 4.0]).unwrap().normalized();
        assert_eq!(v.as_slice(), &[0.6, 0.8]);
    }
}

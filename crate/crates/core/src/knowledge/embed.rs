//! Text embedders.

use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding service error: {0}")]
    Service(String),
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
}

pub trait Embedder: Send + Sync {
    /// Stable identifier recorded next to persisted indexes.
    fn id(&self) -> String;

    fn dim(&self) -> usize;

    /// Unit-norm embedding of `text`.
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

/// Signed feature hashing of lowercase alphanumeric tokens.
///
/// Each token is hashed with 64-bit FNV-1a over `seed.to_le_bytes() ++ token`;
/// the hash modulo `dim` selects the coordinate and its top bit the sign.
/// The accumulated vector is L2-normalized. Text without alphanumeric tokens
/// is hashed as a single token; a vector that cancels to zero collapses onto
/// the coordinate of the whole trimmed text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn hash(&self, token: &str) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        self.seed
            .to_le_bytes()
            .iter()
            .chain(token.as_bytes())
            .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-fnv1a:d={}:seed={}", self.dim, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let lower = trimmed.to_lowercase();
        let mut tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            tokens.push(&lower);
        }
        let mut v = vec![0.0; self.dim];
        for token in tokens {
            let h = self.hash(token);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        if normalize(&mut v).is_none() {
            v.iter_mut().for_each(|x| *x = 0.0);
            v[(self.hash(&lower) % self.dim as u64) as usize] = 1.0;
        }
        Ok(v)
    }
}

/// Scales `v` to unit length; `None` when it is (numerically) zero.
pub fn normalize(v: &mut [f64]) -> Option<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(norm)
}

/// Client for an embeddings endpoint returning `data[0].embedding`.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        dim: usize,
        api_key: Option<String>,
    ) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .expect("http client builds");
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            dim,
            api_key,
            client,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}:d={}", self.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&json!({"model": self.model, "input": text}));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| EmbedError::Service(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbedError::Service(format!("status {}", resp.status())));
        }
        let body: Value = resp
            .json()
            .map_err(|e| EmbedError::Service(e.to_string()))?;
        let mut v: Vec<f64> = body
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Service("missing data[0].embedding".into()))?
            .iter()
            .map(|x| x.as_f64().unwrap_or(0.0))
            .collect();
        if v.len() != self.dim {
            return Err(EmbedError::Dimension {
                got: v.len(),
                expected: self.dim,
            });
        }
        normalize(&mut v).ok_or_else(|| EmbedError::Service("zero embedding".into()))?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Standalone re-derivation of the hash projection.
    fn reference_projection(text: &str, dim: usize, seed: u64) -> Vec<f64> {
        let mut bytes_seed = Vec::new();
        bytes_seed.extend_from_slice(&seed.to_le_bytes());
        let fnv = |token: &str| -> u64 {
            let mut h: u64 = 14695981039346656037;
            for b in bytes_seed.iter().chain(token.as_bytes()) {
                h ^= *b as u64;
                h = h.wrapping_mul(1099511628211);
            }
            h
        };
        let lower = text.trim().to_lowercase();
        let mut v = vec![0.0f64; dim];
        for token in lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let h = fnv(token);
            v[(h % dim as u64) as usize] += if h & (1 << 63) != 0 { -1.0 } else { 1.0 };
        }
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn matches_reference_projection() {
        let e = HashEmbedder::new(8, 7);
        assert_eq!(e.embed("fire").unwrap(), reference_projection("fire", 8, 7));
        assert_eq!(
            e.embed("Two people fighting near a car").unwrap(),
            reference_projection("Two people fighting near a car", 8, 7)
        );
    }

    #[test]
    fn fire_with_seed_zero_is_frozen() {
        // FNV-1a(0u64.to_le_bytes() ++ "fire") = 0x87d6adbca6fa0f59: coordinate 1, negative sign.
        let v = HashEmbedder::new(8, 0).embed("fire").unwrap();
        assert_eq!(v, [0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(v, reference_projection("fire", 8, 0));
    }

    #[test]
    fn deterministic_and_rejects_empty() {
        let e = HashEmbedder::new(16, 1);
        assert_eq!(e.embed("abc").unwrap(), e.embed("abc").unwrap());
        assert!(matches!(e.embed("   "), Err(EmbedError::EmptyText)));
    }

    #[test]
    fn punctuation_only_text_still_embeds() {
        let v = HashEmbedder::new(8, 0).embed("?!").unwrap();
        let n: f64 = v.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn embeddings_have_unit_norm(text in "\\PC{1,60}", dim in 1usize..64, seed: u64) {
            prop_assume!(!text.trim().is_empty());
            let v = HashEmbedder::new(dim, seed).embed(&text).unwrap();
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-6);
        }
    }
}

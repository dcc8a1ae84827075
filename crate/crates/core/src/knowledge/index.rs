//! Exact cosine top-k over unit vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::normalize;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("vector has dimension {got}, index expects {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("zero vector cannot be normalized")]
    ZeroVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u64,
    /// Insertion position of the row.
    pub position: usize,
    pub similarity: f64,
}

/// Brute-force cosine index. Rows are stored unit-normalized in insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    dim: usize,
    rows: Vec<(u64, Vec<f64>)>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "index dimension must be positive");
        Self {
            dim,
            rows: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (u64, &[f64])> {
        self.rows.iter().map(|(id, v)| (*id, v.as_slice()))
    }

    pub fn insert(&mut self, id: u64, mut vector: Vec<f64>) -> Result<(), IndexError> {
        if vector.len() != self.dim {
            return Err(IndexError::Dimension {
                got: vector.len(),
                expected: self.dim,
            });
        }
        if self.rows.iter().any(|(existing, _)| *existing == id) {
            return Err(IndexError::DuplicateId(id));
        }
        normalize(&mut vector).ok_or(IndexError::ZeroVector)?;
        self.rows.push((id, vector));
        Ok(())
    }

    /// The `k` rows most cosine-similar to `query`, best first. Equal
    /// similarities keep insertion order. Returns every row when `k` exceeds
    /// the index size.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<Hit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if self.rows.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(IndexError::Dimension {
                got: query.len(),
                expected: self.dim,
            });
        }
        let mut q = query.to_vec();
        normalize(&mut q).ok_or(IndexError::ZeroVector)?;

        let mut hits: Vec<Hit> = self
            .rows
            .iter()
            .enumerate()
            .map(|(position, (id, v))| Hit {
                id: *id,
                position,
                similarity: dot(&q, v).clamp(-1.0, 1.0),
            })
            .collect();
        let order = |a: &Hit, b: &Hit| {
            b.similarity
                .total_cmp(&a.similarity)
                .then(a.position.cmp(&b.position))
        };
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, order);
            hits.truncate(k);
        }
        hits.sort_unstable_by(order);
        Ok(hits)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

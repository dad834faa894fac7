//! Text embeddings and vector similarity.
//!
//! Every encoder implements [`EmbeddingProvider`]. [`HashingEmbedder`] is a
//! deterministic character-trigram encoder that needs no model files;
//! [`RemoteEmbedder`] forwards texts to an embedding server so a transformer
//! model can be plugged in. [`CachedEmbedder`] memoizes any provider on disk.

mod cache;
mod local;
mod remote;

use thiserror::Error;

use crate::exec::Execution;
use crate::http::TransportError;

pub use cache::CachedEmbedder;
pub use local::{fnv1a_64, HashingEmbedder};
pub use remote::RemoteEmbedder;

/// Output size of the default providers.
pub const DEFAULT_DIM: usize = 384;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector has a non-finite component at index {0}")]
    NonFinite(usize),
    #[error("empty vector")]
    Empty,
    #[error("embedding service: {0}")]
    Transport(#[from] TransportError),
    #[error("embedding service protocol: {0}")]
    Protocol(String),
    #[error("embedding cache {path}: {message}")]
    Cache { path: String, message: String },
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Transport(e) if e.is_retryable())
    }
}

/// Finite real vector of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Empty);
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite(idx));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim.max(1)] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn dot(&self, other: &Self) -> Result<f64, EmbedError> {
        check_dims(self.dim(), other.dim())?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, k: f64) -> Result<Self, EmbedError> {
        Self::new(self.values.iter().map(|v| v * k).collect())
    }
}

fn check_dims(expected: usize, found: usize) -> Result<(), EmbedError> {
    if expected == found {
        Ok(())
    } else {
        Err(EmbedError::DimensionMismatch { expected, found })
    }
}

/// Scales `v` to unit length. The zero vector is returned unchanged.
pub fn l2_normalize(v: &EmbeddingVector) -> EmbeddingVector {
    let norm = v.norm();
    if norm == 0.0 {
        return v.clone();
    }
    EmbeddingVector { values: v.values.iter().map(|x| x / norm).collect() }
}

/// Cosine of the angle between `a` and `b`; 0 if either is the zero vector.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    let dot = a.dot(b)?;
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// A text encoder with a fixed output dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Encodes one text into a unit vector, or the zero vector for empty text.
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    /// Encodes a batch, preserving order.
    fn embed_batch(&self, texts: &[&str], exec: Execution) -> Result<Vec<EmbeddingVector>, EmbedError> {
        exec.map(texts, |t| self.embed(t)).into_iter().collect()
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }

    fn embed_batch(&self, texts: &[&str], exec: Execution) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_batch(texts, exec)
    }
}

pub fn embed_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector, EmbedError> {
    provider.embed(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn padded(head: &[f64], dim: usize) -> EmbeddingVector {
        let mut v = head.to_vec();
        v.resize(dim, 0.0);
        EmbeddingVector::new(v).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = padded(&[1.0, 2.0, 3.0], DEFAULT_DIM);
        let b = padded(&[4.0, 5.0, 6.0], DEFAULT_DIM);
        let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        assert!((cosine_similarity(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.974631846).abs() < 1e-9);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let e1 = padded(&[1.0], 8);
        let e2 = padded(&[0.0, 1.0], 8);
        assert_eq!(cosine_similarity(&e1, &e2).unwrap(), 0.0);
    }

    #[test]
    fn cosine_with_zero_vector_is_zero() {
        let a = padded(&[1.0, 2.0], 4);
        assert_eq!(cosine_similarity(&a, &EmbeddingVector::zeros(4)).unwrap(), 0.0);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let a = padded(&[1.0], 3);
        let b = padded(&[1.0], 4);
        assert!(matches!(cosine_similarity(&a, &b), Err(EmbedError::DimensionMismatch { expected: 3, found: 4 })));
    }

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&padded(&[3.0, 4.0], 6));
        assert!((v.values()[0] - 0.6).abs() < 1e-12);
        assert!((v.values()[1] - 0.8).abs() < 1e-12);
        assert!(l2_normalize(&EmbeddingVector::zeros(6)).is_zero());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(EmbeddingVector::new(vec![1.0, f64::NAN]), Err(EmbedError::NonFinite(1))));
        assert!(matches!(EmbeddingVector::new(vec![]), Err(EmbedError::Empty)));
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = EmbeddingVector> {
        proptest::collection::vec(-100.0f64..100.0, dim).prop_map(|v| EmbeddingVector::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_and_bounded(a in vec_strategy(16), b in vec_strategy(16)) {
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&ab));
        }

        #[test]
        fn cosine_is_scale_invariant(a in vec_strategy(16), b in vec_strategy(16), k in 1e-3f64..1e3) {
            let base = cosine_similarity(&a, &b).unwrap();
            let scaled = cosine_similarity(&a.scaled(k).unwrap(), &b).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-9);
        }

        #[test]
        fn normalize_is_idempotent_and_unit(v in vec_strategy(32)) {
            let once = l2_normalize(&v);
            if !v.is_zero() {
                prop_assert!((once.norm() - 1.0).abs() <= 1e-9);
            }
            let twice = l2_normalize(&once);
            for (x, y) in once.values().iter().zip(twice.values()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}

//! Embedding vectors and cosine similarity, generic over the float type.

use std::fmt::Debug;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Float types usable as embedding coordinates.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("embedding vector is empty")]
    Empty,
    #[error("embedding coordinate {index} is not finite")]
    NonFinite { index: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity undefined for an all-zero vector")]
    ZeroVector,
}

/// Fixed-length sequence of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Serialize", deserialize = "F: Deserialize<'de>"))]
pub struct EmbeddingVector<F> {
    values: Vec<F>,
}

impl<F: Scalar> EmbeddingVector<F> {
    pub fn new(values: Vec<F>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn dot(&self, other: &Self) -> Result<F, EmbeddingError> {
        self.check_dimension(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(F::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn norm(&self) -> F {
        self.values
            .iter()
            .fold(F::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    /// Scales to unit length; an all-zero vector is returned unchanged.
    pub fn normalized(&self) -> Self {
        let norm = self.norm();
        if norm == F::zero() {
            return self.clone();
        }
        Self {
            values: self.values.iter().map(|&v| v / norm).collect(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> EmbeddingVector<G> {
        EmbeddingVector {
            values: self
                .values
                .iter()
                .map(|&v| G::from(v).unwrap_or_else(G::zero))
                .collect(),
        }
    }

    fn check_dimension(&self, other: &Self) -> Result<(), EmbeddingError> {
        if self.dimension() != other.dimension() {
            return Err(EmbeddingError::DimensionMismatch {
                left: self.dimension(),
                right: other.dimension(),
            });
        }
        Ok(())
    }
}

/// `dot(a, b) / (‖a‖‖b‖)`, clamped into `[-1, 1]` against rounding drift.
pub fn cosine_similarity<F: Scalar>(
    a: &EmbeddingVector<F>,
    b: &EmbeddingVector<F>,
) -> Result<F, EmbeddingError> {
    let dot = a.dot(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == F::zero() || nb == F::zero() {
        return Err(EmbeddingError::ZeroVector);
    }
    let one = F::one();
    Ok((dot / (na * nb)).max(-one).min(one))
}

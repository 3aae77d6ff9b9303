//! Flat parameter vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite coordinate {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Dense model parameters. Every coordinate is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ModelVector(Vec<f64>);

impl TryFrom<Vec<f64>> for ModelVector {
    type Error = ModelError;

    fn try_from(coords: Vec<f64>) -> Result<Self, ModelError> {
        ModelVector::new(coords)
    }
}

impl From<ModelVector> for Vec<f64> {
    fn from(m: ModelVector) -> Self {
        m.0
    }
}

impl ModelVector {
    pub fn new(coords: Vec<f64>) -> Result<Self, ModelError> {
        if let Some((index, &value)) = coords.iter().enumerate().find(|(_, c)| !c.is_finite()) {
            return Err(ModelError::NonFinite { index, value });
        }
        Ok(ModelVector(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    /// Builds from coordinates produced by arithmetic on finite vectors.
    /// Callers re-validate with [`ModelVector::check_finite`] at trust
    /// boundaries.
    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        ModelVector(coords)
    }

    pub fn check_finite(&self) -> Result<(), ModelError> {
        match self.0.iter().enumerate().find(|(_, c)| !c.is_finite()) {
            Some((index, &value)) => Err(ModelError::NonFinite { index, value }),
            None => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[cfg(test)]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn ensure_dim(&self, expected: usize) -> Result<(), ModelError> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected,
                found: self.dim(),
            })
        }
    }

    /// `self - other`.
    pub fn sub(&self, other: &ModelVector) -> ModelVector {
        debug_assert_eq!(self.dim(), other.dim());
        ModelVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelVector, scale: f64) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> ModelVector {
        ModelVector(self.0.iter().map(|x| x * scale).collect())
    }

    pub fn distance(&self, other: &ModelVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales onto the ball of radius `radius`; the zero vector stays zero.
    pub fn clipped(&self, radius: f64) -> ModelVector {
        let norm = self.norm();
        if norm == 0.0 || norm <= radius {
            return self.clone();
        }
        self.scaled(radius / norm)
    }
}

//! Fixed-dimension embedding vectors.

use crate::error::{Error, Result};

const NORM_TOLERANCE: f32 = 1e-6;

/// An e-dimensional real vector with a unit-norm flag.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Wraps raw values without normalizing.
    pub fn raw(values: Vec<f32>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    /// L2-normalizes the values. Fails on a near-zero vector.
    pub fn normalized(mut values: Vec<f32>) -> Result<Self> {
        let norm = l2_norm(&values);
        if norm < 1e-8 {
            return Err(Error::InvalidArgument(
                "cannot normalize a near-zero vector".into(),
            ));
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self {
            values,
            normalized: true,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Checks the unit-norm invariant when the flag is set.
    pub fn validate(&self) -> Result<()> {
        if self.normalized {
            let norm = l2_norm(&self.values);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "normalized vector has norm {norm}"
                )));
            }
        }
        Ok(())
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f32 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a * b)
            .sum()
    }
}

pub fn l2_norm(values: &[f32]) -> f32 {
    values.iter().map(|v| v * v).sum::<f32>().sqrt()
}

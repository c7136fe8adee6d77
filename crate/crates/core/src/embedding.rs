use std::fmt;

use crate::error::{Error, Result};
use crate::model::EMBED_DIM;

/// A 64-dimensional utterance embedding.
#[derive(Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != EMBED_DIM {
            return Err(Error::dim("embedding length", EMBED_DIM, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding component {i}")));
        }
        Ok(Embedding(values))
    }

    /// The `i`-th standard basis vector scaled by `scale`.
    pub fn basis(i: usize, scale: f32) -> Self {
        let mut v = vec![0.0; EMBED_DIM];
        v[i] = scale;
        Embedding(v)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f32) -> Self {
        Embedding(self.0.iter().map(|v| v * k).collect())
    }
}

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Embedding").field(&self.0).finish()
    }
}

impl AsRef<[f32]> for Embedding {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

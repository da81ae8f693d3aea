use alloc::vec::Vec;

use crate::geometry::Box3D;

/// Appearance feature vector attached to a detection or track.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(v: Vec<f64>) -> Self {
        Embedding(v)
    }
}

/// One frame's measurement of an object.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    /// Classification confidence in `[0, 1]`.
    pub score: f64,
    pub embedding: Option<Embedding>,
    /// Probability that this detection starts a new identity.
    pub start_prob: Option<f64>,
}

impl Detection {
    pub fn new(bbox: Box3D, score: f64) -> Self {
        Detection { bbox, score, embedding: None, start_prob: None }
    }

    pub fn with_embedding(mut self, e: impl Into<Embedding>) -> Self {
        self.embedding = Some(e.into());
        self
    }

    pub fn with_start_prob(mut self, p: f64) -> Self {
        self.start_prob = Some(p);
        self
    }
}

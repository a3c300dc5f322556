use serde::{Deserialize, Serialize};

use crate::error::{DpsError, Result};

/// Architecture hyperparameters of the toy decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model != self.num_heads * self.d_head {
            return Err(DpsError::Config(format!(
                "d_model {} != num_heads {} * d_head {}",
                self.d_model, self.num_heads, self.d_head
            )));
        }
        if self.num_layers < 1
            || self.num_heads < 1
            || self.d_model < 1
            || self.d_ff < 1
            || self.vocab_size < 1
        {
            return Err(DpsError::Config("all counts must be >= 1".into()));
        }
        if self.max_seq_len < 2 {
            return Err(DpsError::Config("max_seq_len must be >= 2".into()));
        }
        Ok(())
    }

    pub fn total_heads(&self) -> usize {
        self.num_layers * self.num_heads
    }
}

/// Identifies attention head (layer, head), both 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        HeadId { layer, head }
    }
}

/// Per-head suppression strengths in [0, 1]. An all-zeros map leaves the
/// model unmodified; 1 removes the head's contribution entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionMap {
    pub num_layers: usize,
    pub num_heads: usize,
    /// Row-major (layer, head).
    pub weights: Vec<f32>,
}

impl SuppressionMap {
    pub fn zeros(num_layers: usize, num_heads: usize) -> Self {
        SuppressionMap {
            num_layers,
            num_heads,
            weights: vec![0.0; num_layers * num_heads],
        }
    }

    /// Binary mask: 1 on the given heads, 0 elsewhere.
    pub fn from_heads(num_layers: usize, num_heads: usize, heads: &[HeadId]) -> Self {
        let mut map = Self::zeros(num_layers, num_heads);
        for h in heads {
            map.set(*h, 1.0);
        }
        map
    }

    pub fn get(&self, id: HeadId) -> f32 {
        self.weights[id.layer * self.num_heads + id.head]
    }

    pub fn set(&mut self, id: HeadId, s: f32) {
        self.weights[id.layer * self.num_heads + id.head] = s;
    }

    pub fn matches(&self, config: &ModelConfig) -> bool {
        self.num_layers == config.num_layers && self.num_heads == config.num_heads
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if !self.matches(config) {
            return Err(DpsError::Config(format!(
                "suppression shape ({}, {}) does not match model ({}, {})",
                self.num_layers, self.num_heads, config.num_layers, config.num_heads
            )));
        }
        for (i, &w) in self.weights.iter().enumerate() {
            if !(0.0..=1.0).contains(&w) {
                return Err(DpsError::Config(format!(
                    "suppression weight {w} at flat index {i} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn l1_mass(&self) -> f64 {
        self.weights.iter().map(|&w| w as f64).sum()
    }
}

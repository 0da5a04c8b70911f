use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of backbone stages.
pub const STAGES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_tokens: usize,
    pub group_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub depths: [usize; STAGES],
    /// Top-k selection per feature channel in the identifier.
    pub k: usize,
    /// Mapping ratio per stage.
    pub gamma: [f64; STAGES],
    pub alpha: f64,
    pub beta: f64,
    pub classes: usize,
    /// Keep sampling key masks in eval mode (ablation only).
    #[serde(default)]
    pub drop_at_inference: bool,
    /// Seed of the canonical point shuffle ahead of farthest-point sampling.
    #[serde(default)]
    pub tokenizer_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            n_tokens: 32,
            group_size: 16,
            dim: 64,
            heads: 4,
            depths: [2, 2, 2],
            k: 2,
            gamma: [0.2; STAGES],
            alpha: 0.05,
            beta: 0.95,
            classes: 8,
            drop_at_inference: false,
            tokenizer_seed: 0,
        }
    }

    pub fn large(classes: usize) -> Self {
        ModelConfig { n_tokens: 64, group_size: 32, dim: 384, heads: 6, depths: [4, 4, 4], classes, ..Self::desk() }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn blocks(&self) -> usize {
        self.depths.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_tokens == 0 || self.group_size == 0 {
            return bad("n_tokens and group_size must be positive".into());
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.dim % 2 != 0 {
            return bad(format!("dim {} must be even", self.dim));
        }
        if self.depths.contains(&0) {
            return bad("every stage needs at least one block".into());
        }
        if self.k == 0 || self.k > self.n_tokens {
            return bad(format!("k = {} outside 1..={}", self.k, self.n_tokens));
        }
        if self.gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return bad("gamma must be finite and non-negative".into());
        }
        if !(0.0 < self.alpha && self.alpha <= self.beta && self.beta < 1.0) {
            return bad(format!("need 0 < alpha <= beta < 1, got {} and {}", self.alpha, self.beta));
        }
        if self.classes < 2 {
            return bad("at least two classes".into());
        }
        Ok(())
    }
}

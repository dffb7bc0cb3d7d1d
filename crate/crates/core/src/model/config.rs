use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Architecture hyper-parameters. The parameter count is a pure function of
/// this struct (see [`ModelConfig::parameter_count`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Spatial dimension of coordinates.
    pub coord_dim: usize,
    /// Number of simulation parameters.
    pub param_dim: usize,
    pub experts: usize,
    /// Key-value slots per expert memory bank.
    pub memory_slots: usize,
    /// Encoder MLP output width.
    pub query_feature_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    /// Width of each per-parameter embedding.
    pub param_embed_dim: usize,
    pub top_k: usize,
    /// Vertices per axis of the gating grid.
    pub gate_grid_res: usize,
    pub gate_feat_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub param_embed_hidden: usize,
    pub adapter_hidden: Vec<usize>,
    pub gate_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Fourier frequency bands applied to encoder inputs; 0 feeds raw coordinates.
    pub fourier_bands: usize,
    /// Weight of the optional importance-balancing penalty; 0 disables it.
    pub balance_weight: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            coord_dim: 3,
            param_dim: 2,
            experts: 4,
            memory_slots: 256,
            query_feature_dim: 32,
            key_dim: 32,
            value_dim: 32,
            param_embed_dim: 16,
            top_k: 2,
            gate_grid_res: 16,
            gate_feat_dim: 8,
            encoder_hidden: vec![64],
            param_embed_hidden: 16,
            adapter_hidden: vec![64],
            gate_hidden: vec![32],
            decoder_hidden: vec![64, 64],
            fourier_bands: 0,
            balance_weight: 0.0,
            seed: 0,
        }
    }
}

fn mlp_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("coord_dim", self.coord_dim),
            ("param_dim", self.param_dim),
            ("experts", self.experts),
            ("memory_slots", self.memory_slots),
            ("query_feature_dim", self.query_feature_dim),
            ("key_dim", self.key_dim),
            ("value_dim", self.value_dim),
            ("param_embed_dim", self.param_embed_dim),
            ("gate_feat_dim", self.gate_feat_dim),
            ("param_embed_hidden", self.param_embed_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(contract(format!("{name} must be at least 1")));
            }
        }
        let hidden = [
            &self.encoder_hidden,
            &self.adapter_hidden,
            &self.gate_hidden,
            &self.decoder_hidden,
        ];
        if hidden.iter().any(|h| h.contains(&0)) {
            return Err(contract("hidden layer widths must be at least 1"));
        }
        if self.top_k == 0 || self.top_k > self.experts {
            return Err(contract(format!(
                "top_k must lie in 1..={} (got {})",
                self.experts, self.top_k
            )));
        }
        if self.gate_grid_res < 2 {
            return Err(contract("gate_grid_res must be at least 2"));
        }
        if self.gate_vertex_count().is_none() {
            return Err(contract("gating grid size overflows"));
        }
        if !(self.balance_weight >= 0.0) {
            return Err(contract("balance_weight must be non-negative"));
        }
        Ok(())
    }

    pub fn gate_vertex_count(&self) -> Option<usize> {
        let d = u32::try_from(self.coord_dim).ok()?;
        self.gate_grid_res.checked_pow(d)
    }

    /// Width of the encoder input after the optional Fourier encoding.
    pub fn encoder_input_dim(&self) -> usize {
        self.coord_dim * (1 + 2 * self.fourier_bands)
    }

    pub(crate) fn encoder_dims(&self) -> Vec<usize> {
        let mut v = vec![self.encoder_input_dim()];
        v.extend(&self.encoder_hidden);
        v.push(self.query_feature_dim);
        v
    }

    pub(crate) fn embed_dims(&self) -> Vec<usize> {
        vec![1, self.param_embed_hidden, self.param_embed_dim]
    }

    pub(crate) fn adapter_dims(&self) -> Vec<usize> {
        let mut v = vec![self.value_dim + self.param_embed_dim];
        v.extend(&self.adapter_hidden);
        v.push(self.value_dim);
        v
    }

    pub(crate) fn gate_dims(&self) -> Vec<usize> {
        let mut v = vec![self.gate_feat_dim];
        v.extend(&self.gate_hidden);
        v.push(self.experts);
        v
    }

    pub(crate) fn decoder_dims(&self) -> Vec<usize> {
        let mut v = vec![self.value_dim];
        v.extend(&self.decoder_hidden);
        v.push(1);
        v
    }

    /// Closed-form learnable scalar count:
    ///
    /// `R^d·F + mlp(gate) + E·(mlp(enc) + D_q·D_k + D_k² + D_v² + M·(D_k + D_v))
    ///  + m·mlp(embed) + mlp(adapter) + mlp(decoder)`
    /// where `mlp(dims) = Σ (dᵢ·dᵢ₊₁ + dᵢ₊₁)`.
    pub fn parameter_count(&self) -> usize {
        let grid = self.gate_vertex_count().unwrap_or(0) * self.gate_feat_dim;
        let expert = mlp_count(&self.encoder_dims())
            + self.query_feature_dim * self.key_dim
            + self.key_dim * self.key_dim
            + self.value_dim * self.value_dim
            + self.memory_slots * (self.key_dim + self.value_dim);
        grid + mlp_count(&self.gate_dims())
            + self.experts * expert
            + self.param_dim * mlp_count(&self.embed_dims())
            + mlp_count(&self.adapter_dims())
            + mlp_count(&self.decoder_dims())
    }
}

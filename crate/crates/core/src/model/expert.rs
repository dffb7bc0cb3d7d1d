use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, ParamId, ParameterSet, Var};
use crate::error::Result;
use crate::scalar::{c, Scalar};
use crate::tensor::Tensor;

use super::mlp::Mlp;
use super::ModelConfig;

/// Learnable keys `[M×D_k]` and values `[M×D_v]` of one expert.
#[derive(Clone, Copy, Debug)]
pub struct MemoryBank {
    pub keys: ParamId,
    pub values: ParamId,
}

/// One attention-based feature encoder with its own memory bank.
#[derive(Clone, Debug)]
pub struct ExpertEncoder {
    pub(crate) encoder: Mlp,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub bank: MemoryBank,
    key_dim: usize,
}

fn normal_tensor<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Result<Tensor<T>> {
    let normal = Normal::new(0.0, std).expect("valid std");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| c(normal.sample(rng))).collect())
}

fn uniform_tensor<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Result<Tensor<T>> {
    let bound = (3.0 / rows as f64).sqrt();
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| c(rng.random_range(-bound..bound))).collect(),
    )
}

impl ExpertEncoder {
    pub(crate) fn new<T: Scalar, R: Rng>(
        cfg: &ModelConfig,
        params: &mut ParameterSet<T>,
        rng: &mut R,
        index: usize,
    ) -> Result<Self> {
        let p = format!("expert{index}");
        let encoder = Mlp::new(params, rng, &format!("{p}.encoder"), &cfg.encoder_dims(), false)?;
        let w_q = params.add(format!("{p}.w_q"), uniform_tensor(rng, cfg.query_feature_dim, cfg.key_dim)?)?;
        let w_k = params.add(format!("{p}.w_k"), uniform_tensor(rng, cfg.key_dim, cfg.key_dim)?)?;
        let w_v = params.add(format!("{p}.w_v"), uniform_tensor(rng, cfg.value_dim, cfg.value_dim)?)?;
        let keys = params.add(
            format!("{p}.keys"),
            normal_tensor(rng, cfg.memory_slots, cfg.key_dim, 1.0 / (cfg.key_dim as f64).sqrt())?,
        )?;
        let values = params.add(
            format!("{p}.values"),
            normal_tensor(rng, cfg.memory_slots, cfg.value_dim, 1.0 / (cfg.value_dim as f64).sqrt())?,
        )?;
        Ok(Self {
            encoder,
            w_q,
            w_k,
            w_v,
            bank: MemoryBank { keys, values },
            key_dim: cfg.key_dim,
        })
    }

    /// The coordinate MLP `f_E`.
    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    /// Queries `[B×D_k]` from encoder inputs `[B×in]`.
    pub(crate) fn query<T: Scalar>(&self, g: &mut Graph<T>, params: &ParameterSet<T>, inputs: Var) -> Result<Var> {
        let z = self.encoder.forward(g, params, inputs)?;
        let w_q = g.param(params, self.w_q);
        g.matmul(z, w_q)
    }

    /// Cross-attention read of the conditioned bank. Returns the retrieved
    /// features `[B×D_v]` and the attention weights `[B×M]`.
    pub(crate) fn attend<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParameterSet<T>,
        query: Var,
        conditioned_values: Var,
    ) -> Result<(Var, Var)> {
        let keys = g.param(params, self.bank.keys);
        let w_k = g.param(params, self.w_k);
        let w_v = g.param(params, self.w_v);
        let projected_keys = g.matmul(keys, w_k)?;
        let scores = g.matmul_bt(query, projected_keys)?;
        let scores = g.scale(scores, T::one() / c::<T>(self.key_dim as f64).sqrt());
        let attn = g.softmax(scores)?;
        let projected_values = g.matmul(conditioned_values, w_v)?;
        let z = g.matmul(attn, projected_values)?;
        Ok((z, attn))
    }
}

use rand::Rng;

use crate::autodiff::{Graph, ParameterSet, Var};
use crate::error::Result;
use crate::scalar::Scalar;

use super::mlp::Mlp;
use super::ModelConfig;

/// Conditions memory-bank values on the simulation parameters:
/// `V_p = V + f_A([V | z_p])` with `z_p` the Hadamard product of one
/// embedding per parameter. The adapter's output layer starts at zero, so an
/// untrained adapter is the identity on `V`.
#[derive(Clone, Debug)]
pub struct ParameterAdapter {
    pub(crate) embeds: Vec<Mlp>,
    pub(crate) mlp: Mlp,
}

impl ParameterAdapter {
    pub(crate) fn new<T: Scalar, R: Rng>(
        cfg: &ModelConfig,
        params: &mut ParameterSet<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let embeds = (0..cfg.param_dim)
            .map(|s| Mlp::new(params, rng, &format!("adapter.embed{s}"), &cfg.embed_dims(), false))
            .collect::<Result<Vec<_>>>()?;
        let mlp = Mlp::new(params, rng, "adapter.mlp", &cfg.adapter_dims(), true)?;
        Ok(Self { embeds, mlp })
    }

    /// Aggregated parameter embedding `[1×D_p]` from `p` `[1×m]`.
    pub(crate) fn embed<T: Scalar>(&self, g: &mut Graph<T>, params: &ParameterSet<T>, p: Var) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (s, embed) in self.embeds.iter().enumerate() {
            let ps = g.select_col(p, s)?;
            let e = embed.forward(g, params, ps)?;
            acc = Some(match acc {
                None => e,
                Some(a) => g.mul(a, e)?,
            });
        }
        Ok(acc.expect("param_dim >= 1"))
    }

    /// `V + f_A([V | z_p])` for values `[M×D_v]` and embedding `[1×D_p]`.
    pub(crate) fn condition<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParameterSet<T>,
        values: Var,
        embedding: Var,
    ) -> Result<Var> {
        let rows = g.value(values).rows();
        let z = g.repeat_rows(embedding, rows)?;
        let joined = g.concat_cols(values, z)?;
        let delta = self.mlp.forward(g, params, joined)?;
        g.add(values, delta)
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParameterSet, Var};
use crate::error::{contract, Result};
use crate::surrogate::Surrogate;
use crate::tensor::Tensor;
use crate::scalar::Scalar;

use super::mlp::Mlp;

/// Plain coordinate MLP on `[x | p]`, used as the comparison baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub coord_dim: usize,
    pub param_dim: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn parameter_count(&self) -> usize {
        let mut dims = vec![self.coord_dim + self.param_dim];
        dims.extend(&self.hidden);
        dims.push(1);
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Equal-width network of `depth` hidden layers whose parameter count is
    /// closest to `target`.
    pub fn matched(coord_dim: usize, param_dim: usize, depth: usize, target: usize, seed: u64) -> Self {
        let mut best: Option<(usize, Self)> = None;
        for width in 1..=4096 {
            let cfg = Self {
                coord_dim,
                param_dim,
                hidden: vec![width; depth],
                seed,
            };
            let gap = cfg.parameter_count().abs_diff(target);
            if best.as_ref().is_none_or(|(g, _)| gap < *g) {
                best = Some((gap, cfg));
            }
        }
        best.expect("non-empty search").1
    }
}

#[derive(Clone, Debug)]
pub struct CoordinateMlp<T> {
    config: BaselineConfig,
    params: ParameterSet<T>,
    mlp: Mlp,
}

impl<T: Scalar> CoordinateMlp<T> {
    pub fn new(config: BaselineConfig) -> Result<Self> {
        if config.coord_dim == 0 || config.param_dim == 0 || config.hidden.contains(&0) {
            return Err(contract("baseline dimensions must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParameterSet::new();
        let mut dims = vec![config.coord_dim + config.param_dim];
        dims.extend(&config.hidden);
        dims.push(1);
        let mlp = Mlp::new(&mut params, &mut rng, "mlp", &dims, false)?;
        Ok(Self { config, params, mlp })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }
}

impl<T: Scalar> Surrogate<T> for CoordinateMlp<T> {
    fn coord_dim(&self) -> usize {
        self.config.coord_dim
    }

    fn param_dim(&self) -> usize {
        self.config.param_dim
    }

    fn parameters(&self) -> &ParameterSet<T> {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    fn build(&self, g: &mut Graph<T>, coords: &Tensor<T>, p: Var) -> Result<Var> {
        let x = g.constant(coords.clone());
        let pr = g.repeat_rows(p, coords.rows())?;
        let input = g.concat_cols(x, pr)?;
        self.mlp.forward(g, &self.params, input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_matches_parameter_set() {
        let cfg = BaselineConfig::matched(3, 2, 3, 20_000, 1);
        let m = CoordinateMlp::<f32>::new(cfg.clone()).unwrap();
        assert_eq!(m.parameters().scalar_count(), cfg.parameter_count());
        let gap = cfg.parameter_count().abs_diff(20_000);
        assert!(gap < 2 * cfg.hidden[0] + 2, "gap {gap}");
    }
}

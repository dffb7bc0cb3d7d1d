use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParameterSet, Var};
use crate::error::Result;
use crate::scalar::{c, Scalar};
use crate::tensor::Tensor;

/// Fully connected stack: GELU between layers, linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers `<prefix>.<i>.weight` `[in×out]` and `<prefix>.<i>.bias` `[1×out]`.
    /// Weights are uniform with variance `1/fan_in`; biases start at zero.
    /// With `zero_last` the output layer weights are zero too.
    pub fn new<T: Scalar, R: Rng>(
        params: &mut ParameterSet<T>,
        rng: &mut R,
        prefix: &str,
        dims: &[usize],
        zero_last: bool,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(dims.len().saturating_sub(1));
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let last = i + 2 == dims.len();
            let bound = (3.0 / fan_in as f64).sqrt();
            let data: Vec<T> = (0..fan_in * fan_out)
                .map(|_| {
                    if last && zero_last {
                        T::zero()
                    } else {
                        c(rng.random_range(-bound..bound))
                    }
                })
                .collect();
            let weight = params.add(format!("{prefix}.{i}.weight"), Tensor::matrix(fan_in, fan_out, data)?)?;
            let bias = params.add(format!("{prefix}.{i}.bias"), Tensor::zeros(&[1, fan_out]))?;
            layers.push((weight, bias));
        }
        Ok(Self { layers })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, params: &ParameterSet<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = g.param(params, w);
            let bv = g.param(params, b);
            h = g.matmul(h, wv)?;
            h = g.add_row(h, bv)?;
            if i + 1 < self.layers.len() {
                h = g.gelu(h);
            }
        }
        Ok(h)
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn output_layer(&self) -> Option<(ParamId, ParamId)> {
        self.layers.last().copied()
    }
}

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, ParamId, ParameterSet, Var};
use crate::error::{contract, Result};
use crate::scalar::{c, Scalar};
use crate::tensor::Tensor;

use super::mlp::Mlp;
use super::ModelConfig;

/// Coarse learnable vertex grid over `[-1,1]^d` followed by a small MLP that
/// emits expert logits.
#[derive(Clone, Debug)]
pub struct GatingNetwork {
    pub(crate) grid: ParamId,
    pub(crate) mlp: Mlp,
    res: usize,
    dim: usize,
}

impl GatingNetwork {
    pub(crate) fn new<T: Scalar, R: Rng>(
        cfg: &ModelConfig,
        params: &mut ParameterSet<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let vertices = cfg
            .gate_vertex_count()
            .ok_or_else(|| contract("gating grid size overflows"))?;
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let data = (0..vertices * cfg.gate_feat_dim)
            .map(|_| c(normal.sample(rng)))
            .collect();
        let grid = params.add("gate.grid", Tensor::matrix(vertices, cfg.gate_feat_dim, data)?)?;
        let mlp = Mlp::new(params, rng, "gate.mlp", &cfg.gate_dims(), false)?;
        Ok(Self {
            grid,
            mlp,
            res: cfg.gate_grid_res,
            dim: cfg.coord_dim,
        })
    }

    pub fn resolution(&self) -> usize {
        self.res
    }

    pub fn grid_param(&self) -> ParamId {
        self.grid
    }

    /// Flat vertex index of lattice position `ijk` (axis 0 slowest).
    pub fn vertex_index(&self, ijk: &[usize]) -> usize {
        ijk.iter().fold(0, |acc, &i| acc * self.res + i)
    }

    /// Multilinear interpolation taps: `2^d` vertex indices and weights.
    pub fn taps<T: Scalar>(&self, x: &[T], index: &mut Vec<usize>, weight: &mut Vec<T>) {
        let cells = self.res - 1;
        let mut base = Vec::with_capacity(self.dim);
        let mut frac = Vec::with_capacity(self.dim);
        for &xi in x {
            let u = (xi.to_f64_lossy().clamp(-1.0, 1.0) + 1.0) * 0.5 * cells as f64;
            let i0 = (u.floor() as usize).min(cells - 1);
            base.push(i0);
            frac.push(c::<T>(u - i0 as f64));
        }
        let mut ijk = vec![0; self.dim];
        for corner in 0..(1usize << self.dim) {
            let mut w = T::one();
            for a in 0..self.dim {
                let hi = (corner >> (self.dim - 1 - a)) & 1 == 1;
                ijk[a] = base[a] + usize::from(hi);
                w *= if hi { frac[a] } else { T::one() - frac[a] };
            }
            index.push(self.vertex_index(&ijk));
            weight.push(w);
        }
    }

    /// Interpolated grid features `[B×F]` for a batch of coordinates.
    pub(crate) fn features<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParameterSet<T>,
        coords: &Tensor<T>,
    ) -> Result<Var> {
        let b = coords.rows();
        let taps = 1usize << self.dim;
        let mut index = Vec::with_capacity(b * taps);
        let mut weight = Vec::with_capacity(b * taps);
        for r in 0..b {
            self.taps(coords.row_slice(r), &mut index, &mut weight);
        }
        let grid = g.param(params, self.grid);
        g.weighted_gather(grid, index, weight, taps)
    }

    /// Expert probabilities `[B×E]`.
    pub(crate) fn probs<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParameterSet<T>,
        coords: &Tensor<T>,
    ) -> Result<Var> {
        let z = self.features(g, params, coords)?;
        let logits = self.mlp.forward(g, params, z)?;
        g.softmax(logits)
    }
}

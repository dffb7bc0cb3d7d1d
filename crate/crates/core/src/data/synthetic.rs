//! Seeded analytic ensembles: Gaussian blobs whose amplitudes and centers
//! move affinely with the parameters, over a low-frequency background wave.
//!
//! `Y(x; p) = Σ_k a_k(p)·exp(−‖x − c_k(p)‖² / σ_k²) + b(p)·cos(π f·x + φ)`
//! with `a_k`, `c_k` and `b` affine in `p`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParameterSet, Var};
use crate::error::{contract, Result};
use crate::scalar::{c, Scalar};
use crate::surrogate::Surrogate;
use crate::tensor::Tensor;

use super::dataset::lattice_coords;
use super::{EnsembleDataset, Member, NormalizationStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// `a(p) = amplitude + amplitude_slope · p`.
    pub amplitude: f64,
    pub amplitude_slope: Vec<f64>,
    /// `c(p) = center + center_slope · p`, `center_slope` is `d×m`.
    pub center: Vec<f64>,
    pub center_slope: Vec<Vec<f64>>,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    /// `b(p) = offset + slope · p`.
    pub offset: f64,
    pub slope: Vec<f64>,
    pub frequency: Vec<f64>,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Lattice points per axis.
    pub resolution: Vec<usize>,
    /// Physical extent per axis.
    pub domain: Vec<(f64, f64)>,
    pub param_ranges: Vec<(f64, f64)>,
    pub seed: u64,
    pub blobs: Vec<Blob>,
    pub background: Background,
}

impl Default for SyntheticSpec {
    /// 32³ lattice on `[-1,1]³`, two parameters, six blobs.
    fn default() -> Self {
        Self::generate(vec![32, 32, 32], vec![(1.0, 3.0), (0.0, 0.5)], 6, 7)
    }
}

impl SyntheticSpec {
    /// Draws coefficient tables from `seed`. Over each parameter's range an
    /// amplitude changes by at most ±40 % and a center moves by at most
    /// ±0.12 per axis and per parameter. Even-numbered blobs are sharp
    /// (width 0.1–0.2), odd-numbered ones broad (0.3–0.55).
    pub fn generate(resolution: Vec<usize>, param_ranges: Vec<(f64, f64)>, blobs: usize, seed: u64) -> Self {
        let d = resolution.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span: Vec<f64> = param_ranges.iter().map(|r| (r.1 - r.0).max(1e-12)).collect();
        let mid: Vec<f64> = param_ranges.iter().map(|r| 0.5 * (r.0 + r.1)).collect();
        let blobs = (0..blobs)
            .map(|k| {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mid_amp: f64 = sign * rng.random_range(0.6..1.0);
                let amplitude_slope: Vec<f64> = span
                    .iter()
                    .map(|s| rng.random_range(-0.4..0.4) * mid_amp.abs() / s)
                    .collect();
                let amplitude = mid_amp - amplitude_slope.iter().zip(&mid).map(|(a, b)| a * b).sum::<f64>();
                let mid_center: Vec<f64> = (0..d).map(|_| rng.random_range(-0.55..0.55)).collect();
                let center_slope: Vec<Vec<f64>> = (0..d)
                    .map(|_| span.iter().map(|s| rng.random_range(-0.12..0.12) / s).collect())
                    .collect();
                let center = mid_center
                    .iter()
                    .zip(&center_slope)
                    .map(|(c0, row)| c0 - row.iter().zip(&mid).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                Blob {
                    amplitude,
                    amplitude_slope,
                    center,
                    center_slope,
                    // Alternate sharp and broad bumps so the field mixes local
                    // detail with smooth structure.
                    width: if k % 2 == 0 {
                        rng.random_range(0.1..0.2)
                    } else {
                        rng.random_range(0.3..0.55)
                    },
                }
            })
            .collect();
        let slope: Vec<f64> = span.iter().map(|s| rng.random_range(-0.3..0.3) / s).collect();
        let offset = 0.4 - slope.iter().zip(&mid).map(|(a, b)| a * b).sum::<f64>();
        let background = Background {
            offset,
            slope,
            frequency: (0..d).map(|_| rng.random_range(0.3..0.8)).collect(),
            phase: rng.random_range(0.0..2.0 * PI),
        };
        Self {
            resolution,
            domain: vec![(-1.0, 1.0); d],
            param_ranges,
            seed,
            blobs,
            background,
        }
    }

    pub fn coord_dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn param_dim(&self) -> usize {
        self.param_ranges.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution.is_empty() || self.resolution.contains(&0) {
            return Err(contract("grid resolution must be positive on every axis"));
        }
        if self.domain.len() != self.coord_dim() || self.param_ranges.is_empty() {
            return Err(contract("domain and parameter ranges must match the dimensions"));
        }
        if self.param_ranges.iter().any(|r| !(r.1 >= r.0)) {
            return Err(contract("parameter range with max < min"));
        }
        Ok(())
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_dim() {
            return Err(contract(format!("expected {} parameters, got {}", self.param_dim(), p.len())));
        }
        for (s, (&v, r)) in p.iter().zip(&self.param_ranges).enumerate() {
            let tol = 1e-9 * (1.0 + r.0.abs().max(r.1.abs()));
            if v < r.0 - tol || v > r.1 + tol {
                return Err(contract(format!(
                    "parameter {s} = {v} outside its range [{}, {}]",
                    r.0, r.1
                )));
            }
        }
        Ok(())
    }

    fn amplitude(b: &Blob, p: &[f64]) -> f64 {
        b.amplitude + b.amplitude_slope.iter().zip(p).map(|(a, q)| a * q).sum::<f64>()
    }

    fn center(b: &Blob, p: &[f64]) -> Vec<f64> {
        b.center
            .iter()
            .zip(&b.center_slope)
            .map(|(c0, row)| c0 + row.iter().zip(p).map(|(a, q)| a * q).sum::<f64>())
            .collect()
    }

    fn wave(&self, x: &[f64]) -> f64 {
        let bg = &self.background;
        (PI * bg.frequency.iter().zip(x).map(|(f, v)| f * v).sum::<f64>() + bg.phase).cos()
    }

    fn background_level(&self, p: &[f64]) -> f64 {
        let bg = &self.background;
        bg.offset + bg.slope.iter().zip(p).map(|(a, q)| a * q).sum::<f64>()
    }

    /// Field value at physical coordinate `x`.
    pub fn value(&self, x: &[f64], p: &[f64]) -> f64 {
        let mut y = self.background_level(p) * self.wave(x);
        for b in &self.blobs {
            let cen = Self::center(b, p);
            let r2: f64 = x.iter().zip(&cen).map(|(u, v)| (u - v) * (u - v)).sum();
            y += Self::amplitude(b, p) * (-r2 / (b.width * b.width)).exp();
        }
        y
    }

    /// Closed-form `∂Y/∂p` at `(x, p)`.
    pub fn param_gradient(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let m = self.param_dim();
        let w = self.wave(x);
        let mut g: Vec<f64> = self.background.slope.iter().map(|s| s * w).collect();
        for b in &self.blobs {
            let cen = Self::center(b, p);
            let r2: f64 = x.iter().zip(&cen).map(|(u, v)| (u - v) * (u - v)).sum();
            let s2 = b.width * b.width;
            let gauss = (-r2 / s2).exp();
            let a = Self::amplitude(b, p);
            for (s, gs) in g.iter_mut().enumerate().take(m) {
                let pull: f64 = (0..x.len()).map(|k| (x[k] - cen[k]) * b.center_slope[k][s]).sum();
                *gs += b.amplitude_slope[s] * gauss + a * gauss * 2.0 / s2 * pull;
            }
        }
        g
    }

    /// Physical lattice coordinates, row-major `N×d`.
    pub fn coords(&self) -> Vec<f32> {
        lattice_coords(&self.resolution, &self.domain)
    }
}

/// Field of `spec` at parameters `p`, evaluated on its lattice.
pub fn generate_synthetic(spec: &SyntheticSpec, p: &[f64]) -> Result<Vec<f32>> {
    spec.validate()?;
    spec.check_params(p)?;
    let coords = spec.coords();
    Ok(coords
        .chunks(spec.coord_dim())
        .map(|x| {
            let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            spec.value(&x, p) as f32
        })
        .collect())
}

/// One member per parameter tuple, ids numbered from zero.
pub fn make_ensemble(spec: &SyntheticSpec, params: &[Vec<f64>]) -> Result<EnsembleDataset> {
    let members = params
        .iter()
        .enumerate()
        .map(|(j, p)| {
            Ok(Member {
                id: format!("{j:04}"),
                params: p.clone(),
                values: generate_synthetic(spec, p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleDataset::new(
        spec.coord_dim(),
        spec.param_dim(),
        spec.coords(),
        members,
        Some(spec.resolution.clone()),
    )
}

/// Cartesian grid with `counts[s]` evenly spaced values over each range.
pub fn param_grid(ranges: &[(f64, f64)], counts: &[usize]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for (r, &n) in ranges.iter().zip(counts) {
        let values: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    0.5 * (r.0 + r.1)
                } else {
                    r.0 + (r.1 - r.0) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Uniform random parameter tuples strictly inside `ranges` (shrunk by `margin`
/// of each span on both sides).
pub fn random_params(ranges: &[(f64, f64)], count: usize, margin: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            ranges
                .iter()
                .map(|r| {
                    let pad = margin * (r.1 - r.0);
                    rng.random_range(r.0 + pad..=r.1 - pad)
                })
                .collect()
        })
        .collect()
}

/// The analytic generator wrapped as a differentiable surrogate in model
/// units, so analysis routines can run on ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticSurrogate<T> {
    spec: SyntheticSpec,
    stats: NormalizationStats,
    params: ParameterSet<T>,
}

impl<T: Scalar> SyntheticSurrogate<T> {
    pub fn new(spec: SyntheticSpec, stats: NormalizationStats) -> Self {
        Self {
            spec,
            stats,
            params: ParameterSet::new(),
        }
    }
}

impl<T: Scalar> Surrogate<T> for SyntheticSurrogate<T> {
    fn coord_dim(&self) -> usize {
        self.spec.coord_dim()
    }

    fn param_dim(&self) -> usize {
        self.spec.param_dim()
    }

    fn parameters(&self) -> &ParameterSet<T> {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    fn build(&self, g: &mut Graph<T>, coords: &Tensor<T>, p: Var) -> Result<Var> {
        let b = coords.rows();
        let d = self.spec.coord_dim();
        let m = self.spec.param_dim();
        let raw: Vec<f64> = coords
            .data()
            .iter()
            .enumerate()
            .map(|(k, &u)| self.stats.coord_from_unit(k % d, u.to_f64_lossy()))
            .collect();
        let x = g.constant(Tensor::matrix(b, d, raw.iter().map(|&v| c(v)).collect())?);

        let span = g.constant(Tensor::row((0..m).map(|s| c(self.stats.param_span(s))).collect()));
        let low = g.constant(Tensor::row((0..m).map(|s| c(self.stats.param_ranges[s][0])).collect()));
        let scaled = g.mul(p, span)?;
        let praw = g.add(scaled, low)?;

        let wave: Vec<T> = raw.chunks(d).map(|xr| c(self.spec.wave(xr))).collect();
        let wave = g.constant(Tensor::matrix(b, 1, wave)?);
        let bg = &self.spec.background;
        let slope = g.constant(Tensor::matrix(m, 1, bg.slope.iter().map(|&v| c(v)).collect())?);
        let level = g.matmul(praw, slope)?;
        let level = g.add_scalar(level, c(bg.offset));
        let level = g.repeat_rows(level, b)?;
        let mut y = g.mul(level, wave)?;

        for blob in &self.spec.blobs {
            let aslope = g.constant(Tensor::matrix(m, 1, blob.amplitude_slope.iter().map(|&v| c(v)).collect())?);
            let amp = g.matmul(praw, aslope)?;
            let amp = g.add_scalar(amp, c(blob.amplitude));
            let amp = g.repeat_rows(amp, b)?;
            // center_slope is d×m; the row form needs its transpose (m×d).
            let mut ct = Vec::with_capacity(m * d);
            for s in 0..m {
                for k in 0..d {
                    ct.push(c(blob.center_slope[k][s]));
                }
            }
            let cslope = g.constant(Tensor::matrix(m, d, ct)?);
            let cen = g.matmul(praw, cslope)?;
            let c0 = g.constant(Tensor::row(blob.center.iter().map(|&v| c(v)).collect()));
            let cen = g.add(cen, c0)?;
            let cen = g.repeat_rows(cen, b)?;
            let diff = g.sub(x, cen)?;
            let sq = g.square(diff);
            let r2 = g.row_sum(sq);
            let arg = g.scale(r2, c(-1.0 / (blob.width * blob.width)));
            let gauss = g.exp(arg);
            let term = g.mul(amp, gauss)?;
            y = g.add(y, term)?;
        }
        let y = g.add_scalar(y, c(-self.stats.field_range[0]));
        Ok(g.scale(y, c(1.0 / self.stats.field_span())))
    }
}

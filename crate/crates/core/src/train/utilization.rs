use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::NormalizedEnsemble;
use crate::error::Result;
use crate::model::FaInrModel;
use crate::par;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::sampler::sample_batch;

/// Attention mass per memory slot of each expert.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilizationReport {
    pub queries: usize,
    /// Raw accumulated mass, `E×M`. The grand total is `queries × top_k`.
    pub mass: Vec<Vec<f64>>,
    /// `mass` normalized per expert (all zeros for an unused expert).
    pub histograms: Vec<Vec<f64>>,
    /// Shannon entropy (nats) of each expert's histogram.
    pub entropy: Vec<f64>,
    /// Entropy divided by `ln M`: 1 for perfectly even use of the slots.
    pub evenness: Vec<f64>,
}

impl UtilizationReport {
    fn from_mass(queries: usize, mass: Vec<Vec<f64>>) -> Self {
        let histograms: Vec<Vec<f64>> = mass
            .iter()
            .map(|row| {
                let t: f64 = row.iter().sum();
                row.iter().map(|&v| if t > 0.0 { v / t } else { 0.0 }).collect()
            })
            .collect();
        let entropy: Vec<f64> = histograms.iter().map(|h| entropy(h)).collect();
        let evenness = entropy
            .iter()
            .zip(&histograms)
            .map(|(&h, row)| if row.len() > 1 { h / (row.len() as f64).ln() } else { 1.0 })
            .collect();
        Self {
            queries,
            mass,
            histograms,
            entropy,
            evenness,
        }
    }

    /// Mean over experts that received any query.
    fn mean_of(&self, values: &[f64]) -> f64 {
        let used: Vec<f64> = values
            .iter()
            .zip(&self.mass)
            .filter(|(_, m)| m.iter().sum::<f64>() > 0.0)
            .map(|(&v, _)| v)
            .collect();
        if used.is_empty() {
            0.0
        } else {
            used.iter().sum::<f64>() / used.len() as f64
        }
    }

    pub fn mean_entropy(&self) -> f64 {
        self.mean_of(&self.entropy)
    }

    pub fn mean_evenness(&self) -> f64 {
        self.mean_of(&self.evenness)
    }
}

/// Shannon entropy in nats of a normalized histogram.
pub fn entropy(h: &[f64]) -> f64 {
    -h.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Accumulates attention mass per key over `samples` random
/// (member, coordinate) queries drawn from `data`.
pub fn key_utilization<T: Scalar>(
    model: &FaInrModel<T>,
    data: &NormalizedEnsemble<T>,
    samples: usize,
    seed: u64,
) -> Result<UtilizationReport> {
    let cfg = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = sample_batch(data, None, samples, &mut rng);
    let parts = par::map(&batch, |mb| -> Result<Vec<Vec<f64>>> {
        let mut mass = vec![vec![0.0; cfg.memory_slots]; cfg.experts];
        let mut g = Graph::new();
        let p = g.constant(Tensor::row(mb.params.clone()));
        let trace = model.build_forward(&mut g, &mb.coords, p)?;
        for att in &trace.attention {
            let w = g.value(att.weights);
            for r in 0..w.rows() {
                for (acc, v) in mass[att.expert].iter_mut().zip(w.row_slice(r)) {
                    *acc += v.to_f64_lossy();
                }
            }
        }
        Ok(mass)
    });
    let mut mass = vec![vec![0.0; cfg.memory_slots]; cfg.experts];
    for part in parts {
        for (row, prow) in mass.iter_mut().zip(part?) {
            for (a, b) in row.iter_mut().zip(prow) {
                *a += b;
            }
        }
    }
    Ok(UtilizationReport::from_mass(samples, mass))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_histogram_entropy() {
        let r = UtilizationReport::from_mass(4, vec![vec![1.0; 4]]);
        assert!((r.entropy[0] - 4f64.ln()).abs() < 1e-12);
        assert!((r.evenness[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unused_expert_excluded_from_mean() {
        let r = UtilizationReport::from_mass(2, vec![vec![1.0, 1.0], vec![0.0, 0.0]]);
        assert!((r.mean_entropy() - 2f64.ln()).abs() < 1e-12);
    }
}

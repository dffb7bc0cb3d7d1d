use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientMap, Graph};
use crate::data::NormalizedEnsemble;
use crate::error::{contract, io_err, Error, Result};
use crate::metrics::psnr;
use crate::par;
use crate::scalar::{c, Scalar};
use crate::surrogate::{predict, Surrogate};
use crate::tensor::Tensor;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::squared_error;
use super::sampler::{sample_batch, MemberBatch};
use super::utilization::UtilizationReport;

pub const LOG_HEADER: &str = "step,loss,lr,val_psnr,elapsed_s";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Coordinate–member pairs per step.
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub decay_factor: f64,
    /// Steps at which the learning rate is multiplied by `decay_factor`.
    /// `None` places one milestone at every fifth of `steps`.
    pub decay_milestones: Option<Vec<usize>>,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Steps between log lines; validation PSNR is computed on the same cadence.
    pub validation_interval: usize,
    /// Steps between checkpoint callbacks (0: only at the end).
    pub checkpoint_interval: usize,
    /// Rescale gradients whose global norm exceeds this value.
    pub max_grad_norm: Option<f64>,
    /// Abort once the step loss exceeds this multiple of the first step loss.
    pub divergence_factor: f64,
    /// Size of the fixed probe batch whose loss is reported before and after training.
    pub probe_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2048,
            steps: 10_000,
            learning_rate: 1e-4,
            decay_factor: 0.9,
            decay_milestones: None,
            adam: AdamConfig::default(),
            seed: 0,
            validation_interval: 500,
            checkpoint_interval: 0,
            max_grad_norm: None,
            divergence_factor: 1e3,
            probe_size: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(contract(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(contract("batch size must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(contract(format!("decay factor {} must lie in (0, 1]", self.decay_factor)));
        }
        if let Some(ms) = &self.decay_milestones {
            if ms.windows(2).any(|w| w[1] <= w[0]) {
                return Err(contract("decay milestones must be strictly increasing"));
            }
        }
        if self.max_grad_norm.is_some_and(|n| !(n > 0.0)) {
            return Err(contract("max gradient norm must be positive"));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(contract("divergence factor must exceed 1"));
        }
        Ok(())
    }

    pub fn milestones(&self) -> Vec<usize> {
        match &self.decay_milestones {
            Some(ms) => ms.clone(),
            None => {
                let mut ms: Vec<usize> = (1..5).map(|k| self.steps * k / 5).filter(|&s| s > 0).collect();
                ms.dedup();
                ms
            }
        }
    }

    /// Learning rate in effect for the update that follows `step` completed updates.
    pub fn lr_at(&self, step: usize) -> f64 {
        let passed = self.milestones().iter().filter(|&&m| m <= step).count();
        self.learning_rate * self.decay_factor.powi(passed as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    /// Mean step loss since the previous record.
    pub loss: f64,
    pub lr: f64,
    pub val_psnr: Option<f64>,
    pub elapsed_s: f64,
}

impl LogRecord {
    pub fn csv_line(&self) -> String {
        let val = self.val_psnr.map_or(String::new(), |v| format!("{v:.4}"));
        format!("{},{:.8e},{:.6e},{},{:.3}", self.step, self.loss, self.lr, val, self.elapsed_s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<LogRecord>,
    /// Optimizer step count when training stopped.
    pub step: usize,
    pub final_loss: f64,
    pub initial_probe_loss: f64,
    pub final_probe_loss: f64,
    pub elapsed_s: f64,
    #[serde(default)]
    pub utilization: Option<UtilizationReport>,
}

/// Training inputs: members to fit, an optional coordinate pool to sample
/// from, and optional validation data scored by PSNR in model units.
pub struct TrainingData<'a, T> {
    pub train: &'a NormalizedEnsemble<T>,
    pub pool: Option<&'a [usize]>,
    pub validation: Option<&'a NormalizedEnsemble<T>>,
}

type CheckpointHook<'a, T, S> = Box<dyn FnMut(&S, &AdamState<T>) -> Result<()> + 'a>;

/// Adam training loop with milestone decay, divergence guard, CSV logging
/// and checkpoint callbacks.
pub struct Trainer<'a, T: Scalar, S> {
    config: TrainConfig,
    state: Option<AdamState<T>>,
    log_path: Option<PathBuf>,
    checkpoint: Option<CheckpointHook<'a, T, S>>,
}

/// Loss and parameter gradients of one grouped batch. Each member group is
/// differentiated on its own graph (in parallel when enabled) and the parts
/// are summed in member order, so the result does not depend on scheduling.
pub fn batch_gradients<T: Scalar, S: Surrogate<T>>(model: &S, batch: &[MemberBatch<T>]) -> Result<(T, GradientMap<T>)> {
    let total: usize = batch.iter().map(MemberBatch::len).sum();
    if total == 0 {
        return Err(contract("mean squared error of an empty batch"));
    }
    let parts = par::map(batch, |mb| -> Result<(T, GradientMap<T>)> {
        let mut g = Graph::new();
        let loss = batch_loss_graph(&mut g, model, mb, total)?;
        let grads = g.backward(loss)?;
        Ok((g.value(loss).data()[0], g.param_gradients(&grads, model.parameters())))
    });
    let mut loss = T::zero();
    let mut grads = GradientMap::zeros_like(model.parameters());
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grads.accumulate(&g);
    }
    Ok((loss, grads))
}

/// Squared error of one member group divided by the whole batch size, plus
/// the model's regularizer weighted by the group's share of the batch.
pub fn batch_loss_graph<T: Scalar, S: Surrogate<T> + ?Sized>(
    g: &mut Graph<T>,
    model: &S,
    mb: &MemberBatch<T>,
    total: usize,
) -> Result<crate::autodiff::Var> {
    let p = g.constant(Tensor::row(mb.params.clone()));
    let (pred, penalty) = model.build_with_penalty(g, &mb.coords, p)?;
    let target = g.constant(Tensor::matrix(mb.len(), 1, mb.targets.clone())?);
    let mut loss = squared_error(g, pred, target, total)?;
    if let Some(pen) = penalty {
        let share = g.scale(pen, c(mb.len() as f64 / total as f64));
        loss = g.add(loss, share)?;
    }
    Ok(loss)
}

/// Batch loss without gradients.
pub fn batch_loss<T: Scalar, S: Surrogate<T>>(model: &S, batch: &[MemberBatch<T>]) -> Result<T> {
    let total: usize = batch.iter().map(MemberBatch::len).sum();
    if total == 0 {
        return Err(contract("mean squared error of an empty batch"));
    }
    let parts = par::map(batch, |mb| -> Result<T> {
        let mut g = Graph::new();
        let loss = batch_loss_graph(&mut g, model, mb, total)?;
        Ok(g.value(loss).data()[0])
    });
    parts.into_iter().sum()
}

/// Mean PSNR over the members of `data`, in model units (range 1).
pub fn validation_psnr<T: Scalar, S: Surrogate<T>>(model: &S, data: &NormalizedEnsemble<T>) -> Result<f64> {
    let mut total = 0.0;
    for (p, field) in data.params.iter().zip(&data.fields) {
        let pred = predict(model, &data.coords, p)?;
        let gt: Vec<f64> = field.iter().map(|v| v.to_f64_lossy()).collect();
        let pr: Vec<f64> = pred.iter().map(|v| v.to_f64_lossy()).collect();
        total += psnr(&gt, &pr, 1.0)?;
    }
    Ok(total / data.member_count().max(1) as f64)
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64 + 1);
    rng
}

impl<'a, T: Scalar, S: Surrogate<T>> Trainer<'a, T, S> {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            config,
            state: None,
            log_path: None,
            checkpoint: None,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Continues from saved optimizer state; the step counter resumes at `state.step`.
    pub fn resume(mut self, state: AdamState<T>) -> Self {
        self.state = Some(state);
        self
    }

    /// Appends `step,loss,lr,val_psnr,elapsed_s` lines to `path`.
    pub fn log_to(mut self, path: impl Into<PathBuf>) -> Self {
        self.log_path = Some(path.into());
        self
    }

    pub fn on_checkpoint(mut self, hook: impl FnMut(&S, &AdamState<T>) -> Result<()> + 'a) -> Self {
        self.checkpoint = Some(Box::new(hook));
        self
    }

    fn open_log(path: &Path) -> Result<File> {
        let fresh = !path.exists() || path.metadata().map(|m| m.len() == 0).unwrap_or(true);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        if fresh {
            writeln!(f, "{LOG_HEADER}").map_err(|e| io_err(path, e))?;
        }
        Ok(f)
    }

    pub fn run(mut self, model: &mut S, data: &TrainingData<'_, T>) -> Result<TrainReport> {
        let cfg = self.config.clone();
        cfg.validate()?;
        if data.train.member_count() == 0 || data.pool.map_or(data.train.coord_count(), <[usize]>::len) == 0 {
            return Err(contract("training data has no samples"));
        }
        if model.coord_dim() != data.train.coords.cols() {
            return Err(contract("coordinate dimension of model and data differ"));
        }
        let mut state = self.state.take().unwrap_or_else(|| AdamState::new(model.parameters()));
        let mut log = self.log_path.as_deref().map(Self::open_log).transpose()?;

        let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_9b0be);
        let probe = sample_batch(data.train, data.pool, cfg.probe_size.max(1), &mut probe_rng);
        let initial_probe_loss = batch_loss(model, &probe)?.to_f64_lossy();

        let start = Instant::now();
        let mut records = Vec::new();
        let mut reference: Option<f64> = None;
        let mut window = (0.0, 0usize);
        let mut last_loss = f64::NAN;
        while state.step < cfg.steps {
            let step = state.step;
            let mut rng = step_rng(cfg.seed, step);
            let batch = sample_batch(data.train, data.pool, cfg.batch_size, &mut rng);
            let (loss, mut grads) = batch_gradients(&*model, &batch)?;
            let loss = loss.to_f64_lossy();
            let limit = cfg.divergence_factor * reference.unwrap_or(loss);
            if !loss.is_finite() || loss > limit {
                return Err(Error::Diverged { step, loss, limit });
            }
            reference.get_or_insert(loss);
            if let Some(max) = cfg.max_grad_norm {
                let norm = grads.global_norm().to_f64_lossy();
                if norm > max {
                    grads.scale(c(max / norm));
                }
            }
            let lr = cfg.lr_at(step);
            adam_step(model.parameters_mut(), &grads, &mut state, c(lr), &cfg.adam)?;
            last_loss = loss;
            window.0 += loss;
            window.1 += 1;

            let done = state.step;
            let at_end = done == cfg.steps;
            if (cfg.validation_interval > 0 && done % cfg.validation_interval == 0) || at_end {
                let val_psnr = data.validation.map(|v| validation_psnr(&*model, v)).transpose()?;
                let rec = LogRecord {
                    step: done,
                    loss: window.0 / window.1 as f64,
                    lr,
                    val_psnr,
                    elapsed_s: start.elapsed().as_secs_f64(),
                };
                info!("{}", rec.csv_line());
                if let (Some(f), Some(p)) = (log.as_mut(), self.log_path.as_deref()) {
                    writeln!(f, "{}", rec.csv_line()).map_err(|e| io_err(p, e))?;
                }
                records.push(rec);
                window = (0.0, 0);
            }
            let due = cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0;
            if due || at_end {
                if let Some(hook) = self.checkpoint.as_mut() {
                    hook(&*model, &state)?;
                }
            }
        }
        let final_probe_loss = batch_loss(model, &probe)?.to_f64_lossy();
        Ok(TrainReport {
            records,
            step: state.step,
            final_loss: last_loss,
            initial_probe_loss,
            final_probe_loss,
            elapsed_s: start.elapsed().as_secs_f64(),
            utilization: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_milestones_every_fifth() {
        let cfg = TrainConfig {
            steps: 100,
            ..Default::default()
        };
        assert_eq!(cfg.milestones(), vec![20, 40, 60, 80]);
        assert_eq!(cfg.lr_at(19), 1e-4);
        assert!((cfg.lr_at(20) - 0.9e-4).abs() < 1e-18);
        assert!((cfg.lr_at(99) - 1e-4 * 0.9f64.powi(4)).abs() < 1e-18);
    }

    #[test]
    fn config_rejects_bad_values() {
        let bad_lr = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad_lr.validate().is_err());
        let bad_ms = TrainConfig {
            decay_milestones: Some(vec![10, 10]),
            ..Default::default()
        };
        assert!(bad_ms.validate().is_err());
    }
}

use std::sync::OnceLock;

use fainr_core::analysis::{
    expert_map, per_expert_frequency, region_coords, sensitivity_sweep, Adjacency, ExpertMap, SweepSpec,
};
use fainr_core::data::{lattice_slice, EnsembleDataset, NormalizationStats};
use fainr_core::metrics::{per_expert_psnr, psnr};
use fainr_core::model::FaInrModel;
use fainr_core::{predict, Tensor};
use thiserror::Error;

use crate::error::ApiError;
use crate::wire::*;

#[derive(Clone, Debug)]
pub struct ServiceOptions {
    /// Largest accepted sensitivity sweep.
    pub max_sweep_steps: usize,
    /// Origins allowed by CORS; empty allows any origin.
    pub allowed_origins: Vec<String>,
    /// Largest accepted `/predict` batch.
    pub max_predict: usize,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            max_sweep_steps: 64,
            allowed_origins: Vec::new(),
            max_predict: 1 << 20,
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("model and dataset disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Core(#[from] fainr_core::Error),
}

/// A loaded model with its normalization and dataset, immutable for the
/// lifetime of the service.
pub struct Session {
    model: FaInrModel<f32>,
    /// Widened copy for sensitivity sweeps, where differences need 64-bit accuracy.
    model64: FaInrModel<f64>,
    stats: NormalizationStats,
    dataset: EnsembleDataset,
    coords: Tensor<f32>,
    coords64: Tensor<f64>,
    map: ExpertMap,
    options: ServiceOptions,
    summary: OnceLock<Result<ExpertSummary, String>>,
}

fn mismatch(msg: String) -> SessionError {
    SessionError::Mismatch(msg)
}

impl Session {
    /// `dataset` supplies the coordinates (and lattice); its members, when
    /// present, act as ground truth for `/experts/summary`.
    pub fn new(
        model: FaInrModel<f64>,
        stats: NormalizationStats,
        dataset: EnsembleDataset,
        options: ServiceOptions,
    ) -> Result<Self, SessionError> {
        dataset.validate()?;
        let cfg = model.config();
        if cfg.coord_dim != dataset.coord_dim || cfg.param_dim != dataset.param_dim {
            return Err(mismatch(format!(
                "model takes d = {}, m = {}; dataset has d = {}, m = {}",
                cfg.coord_dim, cfg.param_dim, dataset.coord_dim, dataset.param_dim
            )));
        }
        if stats.coord_ranges.len() != cfg.coord_dim || stats.param_ranges.len() != cfg.param_dim {
            return Err(mismatch("normalization statistics have the wrong dimensions".into()));
        }
        if dataset.is_empty() {
            return Err(mismatch("dataset has no coordinates".into()));
        }
        let coords64 = stats.coords_tensor::<f64>(&dataset);
        let coords = stats.coords_tensor::<f32>(&dataset);
        let f32_model = model.cast::<f32>();
        let map = expert_map(&f32_model, &coords, false)?;
        Ok(Self {
            model: f32_model,
            model64: model,
            stats,
            dataset,
            coords,
            coords64,
            map,
            options,
            summary: OnceLock::new(),
        })
    }

    pub fn options(&self) -> &ServiceOptions {
        &self.options
    }

    pub fn expert_assignment(&self) -> &ExpertMap {
        &self.map
    }

    fn ground_truth(&self) -> bool {
        !self.dataset.members.is_empty()
    }

    pub fn info(&self) -> Info {
        let cfg = self.model.config().clone();
        Info {
            experts: cfg.experts,
            coord_dim: cfg.coord_dim,
            param_dim: cfg.param_dim,
            model: cfg,
            param_names: self.dataset.param_names.clone(),
            param_ranges: self.stats.param_ranges.clone(),
            coord_ranges: self.stats.coord_ranges.clone(),
            field_range: self.stats.field_range,
            lattice: self.dataset.lattice.clone(),
            coordinate_count: self.dataset.len(),
            members: self.dataset.members.len(),
            ground_truth: self.ground_truth(),
            max_sweep_steps: self.options.max_sweep_steps,
        }
    }

    fn midpoints(&self) -> Vec<f64> {
        self.stats.param_ranges.iter().map(|r| 0.5 * (r[0] + r[1])).collect()
    }

    /// Checks a physical parameter vector against the trained ranges.
    fn check_params(&self, p: &[f64], field: &str) -> Result<(), ApiError> {
        let m = self.stats.param_ranges.len();
        if p.len() != m {
            return Err(ApiError::invalid(
                "wrong_length",
                format!("expected {m} parameters, got {}", p.len()),
                field,
            ));
        }
        for (s, (&v, r)) in p.iter().zip(&self.stats.param_ranges).enumerate() {
            let name = &self.dataset.param_names[s];
            let tol = 1e-9 * (1.0 + r[0].abs().max(r[1].abs()));
            if !v.is_finite() || v < r[0] - tol || v > r[1] + tol {
                return Err(ApiError::invalid(
                    "out_of_range",
                    format!("parameter {name} = {v} lies outside the trained range [{}, {}]", r[0], r[1]),
                    name,
                ));
            }
        }
        Ok(())
    }

    fn unit_params(&self, p: &[f64]) -> Vec<f32> {
        self.stats.params_unit::<f32>(p)
    }

    fn to_physical(&self, unit: &[f32]) -> Vec<f64> {
        unit.iter().map(|&u| self.stats.field_from_unit(u as f64)).collect()
    }

    pub fn predict(&self, req: &PredictRequest, binary: bool) -> Result<PredictResponse, ApiError> {
        self.check_params(&req.params, "params")?;
        let d = self.stats.coord_ranges.len();
        let flat: Vec<f64> = match &req.coords {
            Coords::Rows(rows) => {
                if let Some(i) = rows.iter().position(|r| r.len() != d) {
                    return Err(ApiError::invalid(
                        "wrong_length",
                        format!("coordinate {i} has {} components, expected {d}", rows[i].len()),
                        "coords",
                    ));
                }
                rows.iter().flatten().copied().collect()
            }
            Coords::Packed(text) => {
                let v = crate::wire::decode_f32(text, "coords")?;
                if v.len() % d != 0 {
                    return Err(ApiError::invalid(
                        "wrong_length",
                        format!("{} packed values are not a whole number of {d}-d coordinates", v.len()),
                        "coords",
                    ));
                }
                v.into_iter().map(f64::from).collect()
            }
        };
        let n = flat.len() / d;
        if n == 0 {
            return Err(ApiError::invalid("empty", "no coordinates given", "coords"));
        }
        if n > self.options.max_predict {
            return Err(ApiError::invalid(
                "too_large",
                format!("{n} coordinates exceed the limit of {}", self.options.max_predict),
                "coords",
            ));
        }
        let mut unit = Vec::with_capacity(flat.len());
        for (k, &v) in flat.iter().enumerate() {
            let a = k % d;
            let r = self.stats.coord_ranges[a];
            let tol = 1e-6 * (r[1] - r[0]).abs().max(1e-12);
            if !v.is_finite() || v < r[0] - tol || v > r[1] + tol {
                return Err(ApiError::invalid(
                    "out_of_range",
                    format!("coordinate {} axis {a} = {v} lies outside the domain [{}, {}]", k / d, r[0], r[1]),
                    "coords",
                ));
            }
            unit.push(self.stats.coord_to_unit(a, v) as f32);
        }
        let coords = Tensor::matrix(n, d, unit).map_err(ApiError::from)?;
        let y = predict(&self.model, &coords, &self.unit_params(&req.params))?;
        Ok(PredictResponse {
            count: n,
            values: Values::pack(self.to_physical(&y), binary),
        })
    }

    fn slice_rows(&self, axis: usize, index: usize) -> Result<(Vec<usize>, [usize; 2]), ApiError> {
        let dims = self
            .dataset
            .lattice
            .as_ref()
            .ok_or_else(|| ApiError::invalid("no_lattice", "dataset coordinates are not a lattice", "axis"))?;
        if dims.len() != 3 && dims.len() != 2 {
            return Err(ApiError::invalid("no_lattice", "slices need a 2-D or 3-D lattice", "axis"));
        }
        if axis >= dims.len() {
            return Err(ApiError::invalid(
                "out_of_range",
                format!("axis {axis} out of range for a {}-d lattice", dims.len()),
                "axis",
            ));
        }
        if index >= dims[axis] {
            return Err(ApiError::invalid(
                "out_of_range",
                format!("index {index} out of range for axis {axis} (extent {})", dims[axis]),
                "index",
            ));
        }
        let (rows, ext) = lattice_slice(dims, axis, index)?;
        let shape = if ext.len() == 2 { [ext[0], ext[1]] } else { [1, ext[0]] };
        Ok((rows, shape))
    }

    fn parse_params(&self, text: Option<&str>) -> Result<Vec<f64>, ApiError> {
        let p = match text {
            None => self.midpoints(),
            Some(t) => t
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ApiError::invalid("bad_number", format!("params: {e}"), "params"))?,
        };
        self.check_params(&p, "params")?;
        Ok(p)
    }

    pub fn slice(&self, q: &SliceQuery) -> Result<SliceResponse, ApiError> {
        let (rows, shape) = self.slice_rows(q.axis, q.index)?;
        let params = self.parse_params(q.params.as_deref())?;
        let sub = region_coords(&self.coords, &rows)?;
        let y = predict(&self.model, &sub, &self.unit_params(&params))?;
        Ok(SliceResponse {
            axis: q.axis,
            index: q.index,
            shape,
            params,
            values: Values::pack(self.to_physical(&y), q.binary),
            field_range: self.stats.field_range,
        })
    }

    pub fn expert_map(&self, q: &MapQuery) -> Result<ExpertMapResponse, ApiError> {
        let (rows, shape) = self.slice_rows(q.axis, q.index)?;
        Ok(ExpertMapResponse {
            axis: q.axis,
            index: q.index,
            shape,
            experts: self.map.experts,
            values: rows.iter().map(|&i| self.map.assignment[i]).collect(),
        })
    }

    pub fn sensitivity(&self, req: &SensitivityRequest) -> Result<SensitivityResponse, ApiError> {
        let m = self.stats.param_ranges.len();
        if req.param_index >= m {
            return Err(ApiError::invalid(
                "out_of_range",
                format!("parameter index {} out of range (m = {m})", req.param_index),
                "paramIndex",
            ));
        }
        let cap = self.options.max_sweep_steps;
        if req.steps == 0 || req.steps > cap {
            return Err(ApiError::invalid(
                "out_of_range",
                format!("steps must lie in 1..={cap}, got {}", req.steps),
                "steps",
            ));
        }
        let r = self.stats.param_ranges[req.param_index];
        let range = req.range.unwrap_or(r);
        let name = &self.dataset.param_names[req.param_index];
        let tol = 1e-9 * (1.0 + r[0].abs().max(r[1].abs()));
        if range[0] < r[0] - tol || range[1] > r[1] + tol || (req.steps > 1 && !(range[1] > range[0])) {
            return Err(ApiError::invalid(
                "out_of_range",
                format!(
                    "sweep [{}, {}] must be increasing and inside the trained range [{}, {}] of {name}",
                    range[0], range[1], r[0], r[1]
                ),
                "range",
            ));
        }
        let base = match &req.base_params {
            Some(b) => {
                self.check_params(b, "baseParams")?;
                b.clone()
            }
            None => self.midpoints(),
        };
        let rows = req
            .region
            .rows(self.dataset.len(), Some(&self.map))
            .map_err(|e| ApiError::invalid("bad_region", e.to_string(), "region"))?;
        let coords = region_coords(&self.coords64, &rows)?;
        let spec = SweepSpec {
            param: req.param_index,
            range: (range[0], range[1]),
            steps: req.steps,
            base,
        };
        let curve = sensitivity_sweep(&self.model64, &coords, &self.stats, &spec)?;
        Ok(SensitivityResponse {
            param_index: curve.param,
            param_name: name.clone(),
            region: req.region.clone(),
            region_size: curve.region_size,
            values: curve.values,
            sensitivity: curve.sensitivity,
            fd_sensitivity: curve.fd_sensitivity,
            max_rel_discrepancy: curve.max_rel_discrepancy,
        })
    }

    /// Per-expert PSNR and Laplacian frequency, computed once and cached.
    pub fn summary(&self) -> Result<ExpertSummary, ApiError> {
        self.summary
            .get_or_init(|| self.compute_summary().map_err(|e| e.body.message))
            .clone()
            .map_err(ApiError::internal)
    }

    fn compute_summary(&self) -> Result<ExpertSummary, ApiError> {
        let e = self.map.experts;
        let graph = Adjacency::for_dataset(&self.dataset)?;
        let assign = &self.map.assignment;
        let counts = self.map.counts();
        let finite = |v: f64| v.is_finite().then_some(v);

        if !self.ground_truth() {
            let p = self.midpoints();
            let y = self.to_physical(&predict(&self.model, &self.coords, &self.unit_params(&p))?);
            let freq = per_expert_frequency(&graph, assign, e, &y)?;
            return Ok(ExpertSummary {
                experts: (0..e)
                    .map(|k| ExpertRow {
                        expert: k,
                        count: counts[k],
                        psnr: None,
                        frequency: freq.per_expert[k],
                    })
                    .collect(),
                global_psnr: None,
                global_frequency: freq.global,
                frequency_source: FrequencySource::Prediction,
                members: 0,
            });
        }

        let span = self.stats.field_span();
        let mut gt_all = Vec::new();
        let mut pred_all = Vec::new();
        let mut freq_sum = vec![0.0; e];
        let mut freq_hits = vec![0usize; e];
        let mut global_freq = 0.0;
        for member in &self.dataset.members {
            let gt: Vec<f64> = member.values.iter().map(|&v| v as f64).collect();
            let y = predict(&self.model, &self.coords, &self.unit_params(&member.params))?;
            pred_all.extend(self.to_physical(&y));
            let f = per_expert_frequency(&graph, assign, e, &gt)?;
            for (k, v) in f.per_expert.iter().enumerate() {
                if let Some(v) = v {
                    freq_sum[k] += v;
                    freq_hits[k] += 1;
                }
            }
            global_freq += f.global;
            gt_all.extend(gt);
        }
        let scores = per_expert_psnr(assign, e, &gt_all, &pred_all, span)?;
        let members = self.dataset.members.len();
        Ok(ExpertSummary {
            experts: scores
                .iter()
                .map(|s| ExpertRow {
                    expert: s.expert,
                    count: s.count,
                    psnr: s.psnr.and_then(finite),
                    frequency: (freq_hits[s.expert] > 0).then(|| freq_sum[s.expert] / freq_hits[s.expert] as f64),
                })
                .collect(),
            global_psnr: finite(psnr(&gt_all, &pred_all, span)?),
            global_frequency: global_freq / members as f64,
            frequency_source: FrequencySource::GroundTruth,
            members,
        })
    }
}

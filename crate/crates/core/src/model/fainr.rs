use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParameterSet, Var};
use crate::error::{contract, Error, Result};
use crate::scalar::{c, Scalar};
use crate::surrogate::Surrogate;
use crate::tensor::Tensor;

use super::adapter::ParameterAdapter;
use super::expert::ExpertEncoder;
use super::gating::GatingNetwork;
use super::mlp::Mlp;
use super::routing::{route_topk, GateDecision};
use super::ModelConfig;

const COORD_TOL: f64 = 1e-6;

/// Mixture of memory-bank experts routed by a coordinate gate, with a
/// parameter-conditioned value adapter and an MLP decoder.
#[derive(Clone, Debug)]
pub struct FaInrModel<T> {
    config: ModelConfig,
    params: ParameterSet<T>,
    gating: GatingNetwork,
    experts: Vec<ExpertEncoder>,
    adapter: ParameterAdapter,
    decoder: Mlp,
}

/// Attention weights recorded for the rows routed to one expert.
#[derive(Clone, Debug)]
pub struct ExpertAttention {
    pub expert: usize,
    pub rows: Vec<usize>,
    /// `[rows.len()×M]` attention weights.
    pub weights: Var,
}

/// Graph handles produced by [`FaInrModel::build_forward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// `[B×1]` predictions.
    pub output: Var,
    /// `[B×E]` gate probabilities.
    pub probs: Var,
    pub decisions: Vec<GateDecision<T>>,
    pub attention: Vec<ExpertAttention>,
}

/// Per-query diagnostics from [`FaInrModel::forward`].
#[derive(Clone, Debug)]
pub struct Diagnostics<T> {
    pub gate: GateDecision<T>,
    /// `(expert, attention over its M keys)` for each selected expert.
    pub attention: Vec<(usize, Vec<T>)>,
}

impl<T: Scalar> FaInrModel<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParameterSet::new();
        let gating = GatingNetwork::new(&config, &mut params, &mut rng)?;
        let experts = (0..config.experts)
            .map(|e| ExpertEncoder::new(&config, &mut params, &mut rng, e))
            .collect::<Result<Vec<_>>>()?;
        let adapter = ParameterAdapter::new(&config, &mut params, &mut rng)?;
        let decoder = Mlp::new(&mut params, &mut rng, "decoder", &config.decoder_dims(), false)?;
        Ok(Self {
            config,
            params,
            gating,
            experts,
            adapter,
            decoder,
        })
    }

    /// Rebuilds the model structure for `config` and installs `tensors`
    /// (name, tensor) in place of the initial values.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut model = Self::new(config)?;
        let mut seen = vec![false; model.params.len()];
        for (name, t) in tensors {
            let id = model.params.id(&name).ok_or_else(|| Error::Checkpoint {
                field: name.clone(),
                message: "tensor not part of this configuration".into(),
            })?;
            let expected = model.params.get(id).shape().to_vec();
            if t.shape() != expected.as_slice() {
                return Err(Error::Checkpoint {
                    field: name,
                    message: format!("shape {:?} does not match expected {:?}", t.shape(), expected),
                });
            }
            *model.params.get_mut(id) = t;
            seen[id.index()] = true;
        }
        if let Some(missing) = model.params.ids().find(|id| !seen[id.index()]) {
            return Err(Error::Checkpoint {
                field: model.params.name(missing).to_string(),
                message: "tensor missing (truncated checkpoint?)".into(),
            });
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn experts(&self) -> &[ExpertEncoder] {
        &self.experts
    }

    pub fn gating(&self) -> &GatingNetwork {
        &self.gating
    }

    pub fn adapter(&self) -> &ParameterAdapter {
        &self.adapter
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Scalar>(&self) -> FaInrModel<U> {
        FaInrModel {
            config: self.config.clone(),
            params: self.params.cast(),
            gating: self.gating.clone(),
            experts: self.experts.clone(),
            adapter: self.adapter.clone(),
            decoder: self.decoder.clone(),
        }
    }

    fn check_coords(&self, coords: &Tensor<T>) -> Result<()> {
        if coords.cols() != self.config.coord_dim {
            return Err(Error::Dimension {
                op: "coordinates",
                lhs: coords.shape().to_vec(),
                rhs: vec![self.config.coord_dim],
            });
        }
        if let Some(bad) = coords
            .data()
            .iter()
            .find(|v| !(v.to_f64_lossy().abs() <= 1.0 + COORD_TOL))
        {
            return Err(contract(format!(
                "coordinate component {bad} outside the normalized cube [-1,1]"
            )));
        }
        Ok(())
    }

    fn check_params(&self, p: &[T]) -> Result<()> {
        if p.len() != self.config.param_dim {
            return Err(contract(format!(
                "expected {} simulation parameters, got {}",
                self.config.param_dim,
                p.len()
            )));
        }
        Ok(())
    }

    /// Encoder inputs: raw coordinates, optionally followed by
    /// `sin(2^l π x), cos(2^l π x)` for each band `l`.
    pub fn encoder_inputs(&self, coords: &Tensor<T>) -> Result<Tensor<T>> {
        let bands = self.config.fourier_bands;
        if bands == 0 {
            return Ok(coords.clone());
        }
        let d = coords.cols();
        let width = self.config.encoder_input_dim();
        let mut out = Vec::with_capacity(coords.rows() * width);
        for r in 0..coords.rows() {
            let x = coords.row_slice(r);
            out.extend_from_slice(x);
            for l in 0..bands {
                let f: T = c(std::f64::consts::PI * (1u64 << l) as f64);
                out.extend(x.iter().map(|&v| (f * v).sin()));
                out.extend(x.iter().map(|&v| (f * v).cos()));
            }
            debug_assert_eq!(out.len() % width, 0, "{d}");
        }
        Tensor::matrix(coords.rows(), width, out)
    }

    /// Full batched forward on `g` for one parameter row `p` `[1×m]`.
    pub fn build_forward(&self, g: &mut Graph<T>, coords: &Tensor<T>, p: Var) -> Result<ForwardTrace<T>> {
        self.check_coords(coords)?;
        if g.value(p).len() != self.config.param_dim {
            return Err(contract(format!(
                "expected {} simulation parameters, got {}",
                self.config.param_dim,
                g.value(p).len()
            )));
        }
        let b = coords.rows();
        let e_count = self.config.experts;
        let params = &self.params;

        let probs = self.gating.probs(g, params, coords)?;
        let mut decisions = Vec::with_capacity(b);
        let mut mask = vec![T::zero(); b * e_count];
        let mut routed: Vec<Vec<usize>> = vec![Vec::new(); e_count];
        for r in 0..b {
            let d = route_topk(g.value(probs).row_slice(r), self.config.top_k)?;
            for &e in &d.selected {
                mask[r * e_count + e] = T::one();
                routed[e].push(r);
            }
            decisions.push(d);
        }
        let mask = g.constant(Tensor::matrix(b, e_count, mask)?);
        let masked = g.mul(probs, mask)?;
        let norm = g.row_sum(masked);
        let weights = g.div_col(masked, norm)?;

        let embedding = self.adapter.embed(g, params, p)?;
        let inputs = self.encoder_inputs(coords)?;
        let mut mixed: Option<Var> = None;
        let mut attention = Vec::with_capacity(e_count);
        for (e, expert) in self.experts.iter().enumerate() {
            let rows = std::mem::take(&mut routed[e]);
            if rows.is_empty() {
                continue;
            }
            let w = inputs.cols();
            let mut sub = Vec::with_capacity(rows.len() * w);
            for &r in &rows {
                sub.extend_from_slice(inputs.row_slice(r));
            }
            let x = g.constant(Tensor::matrix(rows.len(), w, sub)?);
            let q = expert.query(g, params, x)?;
            let values = g.param(params, expert.bank.values);
            let vp = self.adapter.condition(g, params, values, embedding)?;
            let (z, attn) = expert.attend(g, params, q, vp)?;
            let wcol = g.select_col(weights, e)?;
            let wcol = g.gather_rows(wcol, &rows)?;
            let z = g.mul_col(z, wcol)?;
            let z = g.scatter_add_rows(z, &rows, b)?;
            mixed = Some(match mixed {
                None => z,
                Some(acc) => g.add(acc, z)?,
            });
            attention.push(ExpertAttention {
                expert: e,
                rows,
                weights: attn,
            });
        }
        let mixed = mixed.ok_or_else(|| contract("empty batch"))?;
        let output = self.decoder.forward(g, params, mixed)?;
        Ok(ForwardTrace {
            output,
            probs,
            decisions,
            attention,
        })
    }

    /// `q = f_E(x)·W_q` for one expert.
    pub fn encode_query(&self, expert: usize, x: &[T]) -> Result<Vec<T>> {
        let coords = Tensor::row(x.to_vec());
        self.check_coords(&coords)?;
        let ex = self.expert(expert)?;
        let mut g = Graph::new();
        let inputs = g.constant(self.encoder_inputs(&coords)?);
        let q = ex.query(&mut g, &self.params, inputs)?;
        Ok(g.value(q).data().to_vec())
    }

    /// Parameter-conditioned values `V_p` `[M×D_v]` of one expert's bank.
    pub fn condition_values(&self, expert: usize, p: &[T]) -> Result<Tensor<T>> {
        self.check_params(p)?;
        let ex = self.expert(expert)?;
        let mut g = Graph::new();
        let pv = g.constant(Tensor::row(p.to_vec()));
        let emb = self.adapter.embed(&mut g, &self.params, pv)?;
        let values = g.param(&self.params, ex.bank.values);
        let vp = self.adapter.condition(&mut g, &self.params, values, emb)?;
        Ok(g.value(vp).clone())
    }

    /// Aggregated parameter embedding `z_p` `[1×D_p]`.
    pub fn parameter_embedding(&self, p: &[T]) -> Result<Vec<T>> {
        self.check_params(p)?;
        let mut g = Graph::new();
        let pv = g.constant(Tensor::row(p.to_vec()));
        let emb = self.adapter.embed(&mut g, &self.params, pv)?;
        Ok(g.value(emb).data().to_vec())
    }

    /// Cross-attention read: returns the retrieved feature and the weights over keys.
    pub fn attend(&self, expert: usize, query: &[T], conditioned_values: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
        let ex = self.expert(expert)?;
        let mut g = Graph::new();
        let q = g.constant(Tensor::row(query.to_vec()));
        let vp = g.constant(conditioned_values.clone());
        let (z, attn) = ex.attend(&mut g, &self.params, q, vp)?;
        Ok((g.value(z).data().to_vec(), g.value(attn).data().to_vec()))
    }

    /// Gate probabilities Φ(x).
    pub fn gate(&self, x: &[T]) -> Result<Vec<T>> {
        let coords = Tensor::row(x.to_vec());
        self.check_coords(&coords)?;
        let mut g = Graph::new();
        let probs = self.gating.probs(&mut g, &self.params, &coords)?;
        Ok(g.value(probs).data().to_vec())
    }

    /// Gate probabilities `[N×E]` for many coordinates.
    pub fn gate_batch(&self, coords: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_coords(coords)?;
        let mut g = Graph::new();
        let probs = self.gating.probs(&mut g, &self.params, coords)?;
        Ok(g.value(probs).clone())
    }

    /// Interpolated gating-grid feature `z_G(x)`.
    pub fn gate_features(&self, x: &[T]) -> Result<Vec<T>> {
        let coords = Tensor::row(x.to_vec());
        self.check_coords(&coords)?;
        let mut g = Graph::new();
        let z = self.gating.features(&mut g, &self.params, &coords)?;
        Ok(g.value(z).data().to_vec())
    }

    /// Decoder applied to one aggregated feature vector.
    pub fn decode(&self, feature: &[T]) -> Result<T> {
        let mut g = Graph::new();
        let z = g.constant(Tensor::row(feature.to_vec()));
        let y = self.decoder.forward(&mut g, &self.params, z)?;
        Ok(g.value(y).data()[0])
    }

    /// Single query prediction with routing and attention diagnostics.
    pub fn forward(&self, x: &[T], p: &[T]) -> Result<(T, Diagnostics<T>)> {
        self.check_params(p)?;
        let coords = Tensor::row(x.to_vec());
        let mut g = Graph::new();
        let pv = g.constant(Tensor::row(p.to_vec()));
        let trace = self.build_forward(&mut g, &coords, pv)?;
        let y = g.value(trace.output).data()[0];
        let gate = trace.decisions.into_iter().next().expect("one row");
        let mut attention: Vec<(usize, Vec<T>)> = trace
            .attention
            .iter()
            .map(|a| (a.expert, g.value(a.weights).data().to_vec()))
            .collect();
        attention.sort_by_key(|(e, _)| gate.selected.iter().position(|s| s == e));
        Ok((y, Diagnostics { gate, attention }))
    }

    /// Predictions for a batch sharing one parameter vector; the adapter runs
    /// once per expert for the whole batch.
    pub fn forward_batch(&self, coords: &Tensor<T>, p: &[T]) -> Result<Vec<T>> {
        self.check_params(p)?;
        let mut g = Graph::new();
        let pv = g.constant(Tensor::row(p.to_vec()));
        let trace = self.build_forward(&mut g, coords, pv)?;
        Ok(g.value(trace.output).data().to_vec())
    }

    fn expert(&self, e: usize) -> Result<&ExpertEncoder> {
        self.experts
            .get(e)
            .ok_or_else(|| contract(format!("expert {e} out of range (E = {})", self.experts.len())))
    }
}

impl<T: Scalar> Surrogate<T> for FaInrModel<T> {
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
        Ok(self.build_forward(g, coords, p)?.output)
    }

    /// Optional importance balancing: `E·Σ_e imp_e² / B² − 1` with
    /// `imp_e = Σ_b Φ_be` (squared coefficient of variation).
    fn build_with_penalty(&self, g: &mut Graph<T>, coords: &Tensor<T>, p: Var) -> Result<(Var, Option<Var>)> {
        let trace = self.build_forward(g, coords, p)?;
        if self.config.balance_weight <= 0.0 {
            return Ok((trace.output, None));
        }
        let b = coords.rows();
        let ones = g.constant(Tensor::full(&[1, b], T::one()));
        let importance = g.matmul(ones, trace.probs)?;
        let sq = g.square(importance);
        let s = g.sum(sq);
        let e = self.config.experts as f64;
        let cv = g.scale(s, c(e / (b * b) as f64));
        let cv = g.add_scalar(cv, -T::one());
        Ok((trace.output, Some(g.scale(cv, c(self.config.balance_weight)))))
    }
}

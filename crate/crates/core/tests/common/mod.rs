#![allow(dead_code)]

use fainr_core::model::{FaInrModel, ModelConfig};
use fainr_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small FA-INR configuration for exact checks.
pub fn toy_config(experts: usize, top_k: usize, slots: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        coord_dim: 3,
        param_dim: 2,
        experts,
        memory_slots: slots,
        query_feature_dim: 6,
        key_dim: 5,
        value_dim: 4,
        param_embed_dim: 3,
        top_k,
        gate_grid_res: 4,
        gate_feat_dim: 3,
        encoder_hidden: vec![8],
        param_embed_hidden: 4,
        adapter_hidden: vec![6],
        gate_hidden: vec![5],
        decoder_hidden: vec![6],
        fourier_bands: 0,
        balance_weight: 0.0,
        seed,
    }
}

/// Overwrites every tensor whose name starts with `prefix` with uniform
/// values in `[-scale, scale]`.
pub fn randomize(model: &mut FaInrModel<f64>, prefix: &str, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model
        .params()
        .ids()
        .filter(|&id| model.params().name(id).starts_with(prefix))
        .collect();
    assert!(!ids.is_empty(), "no tensor named {prefix}*");
    for id in ids {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

/// Toy model whose adapter and gate are active (non-zero adapter output,
/// spread-out gating grid).
pub fn active_model(experts: usize, top_k: usize, slots: usize, seed: u64) -> FaInrModel<f64> {
    let mut m = FaInrModel::new(toy_config(experts, top_k, slots, seed)).unwrap();
    randomize(&mut m, "adapter.mlp.1", 0.5, seed ^ 1);
    randomize(&mut m, "gate.grid", 1.5, seed ^ 2);
    m
}

pub fn set(model: &mut FaInrModel<f64>, name: &str, t: Tensor<f64>) {
    let id = model.params().id(name).unwrap_or_else(|| panic!("no tensor {name}"));
    assert_eq!(model.params().get(id).shape(), t.shape(), "{name}");
    *model.params_mut().get_mut(id) = t;
}

pub fn get(model: &FaInrModel<f64>, name: &str) -> Tensor<f64> {
    model.params().get(model.params().id(name).unwrap()).clone()
}

pub fn random_coords(rng: &mut impl Rng, n: usize, d: usize) -> Tensor<f64> {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_params(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.random_range(0.0..1.0)).collect()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Synthetic ensemble on a small lattice, normalized with its own stats.
pub fn toy_ensemble(res: usize, members: usize, seed: u64) -> fainr_core::data::NormalizedEnsemble<f64> {
    use fainr_core::data::{make_ensemble, normalize, random_params, SyntheticSpec};
    let spec = SyntheticSpec::generate(vec![res; 3], vec![(1.0, 3.0), (0.0, 0.5)], 4, seed);
    let params = random_params(&spec.param_ranges, members, 0.0, seed);
    normalize(&make_ensemble(&spec, &params).unwrap()).unwrap()
}

pub fn toy_ensemble32(res: usize, members: usize, seed: u64) -> fainr_core::data::NormalizedEnsemble<f32> {
    use fainr_core::data::{make_ensemble, normalize, random_params, SyntheticSpec};
    let spec = SyntheticSpec::generate(vec![res; 3], vec![(1.0, 3.0), (0.0, 0.5)], 4, seed);
    let params = random_params(&spec.param_ranges, members, 0.0, seed);
    normalize(&make_ensemble(&spec, &params).unwrap()).unwrap()
}

/// Largest tape-vs-central-difference relative error of the grouped batch
/// loss over every parameter of `model`.
pub fn pipeline_fd_error(
    model: &FaInrModel<f64>,
    batch: &[fainr_core::train::MemberBatch<f64>],
    eps: f64,
) -> fainr_core::autodiff::FdReport {
    use fainr_core::autodiff::fd_check;
    use fainr_core::train::batch_loss_graph;
    use fainr_core::Surrogate;
    let total: usize = batch.iter().map(|mb| mb.len()).sum();
    fd_check(
        |g, params| {
            let mut probe = model.clone();
            *probe.parameters_mut() = params.clone();
            let mut loss = None;
            for mb in batch {
                let part = batch_loss_graph(g, &probe, mb, total)?;
                loss = Some(match loss {
                    None => part,
                    Some(acc) => g.add(acc, part)?,
                });
            }
            Ok(loss.expect("non-empty batch"))
        },
        model.params(),
        eps,
    )
    .unwrap()
}

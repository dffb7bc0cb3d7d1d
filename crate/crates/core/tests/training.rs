mod common;

use common::{active_model, toy_config, toy_ensemble};
use fainr_core::autodiff::{fd_check, GradientMap, Graph, ParameterSet};
use fainr_core::data::{NormalizationStats, NormalizedEnsemble};
use fainr_core::model::FaInrModel;
use fainr_core::train::{
    adam_step, batch_gradients, key_utilization, mse, mse_loss, sample_batch, AdamConfig, AdamState,
    MemberBatch, TrainConfig, Trainer, TrainingData, LOG_HEADER,
};
use fainr_core::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scalar_params(v: f64) -> ParameterSet<f64> {
    let mut p = ParameterSet::new();
    p.add("w", Tensor::scalar(v)).unwrap();
    p
}

fn grads_of(params: &ParameterSet<f64>, g: f64) -> GradientMap<f64> {
    let mut m = GradientMap::zeros_like(params);
    for id in params.ids() {
        m.get_mut(id).data_mut().fill(g);
    }
    m
}

#[test]
fn zero_gradient_leaves_parameters_and_decays_moments() {
    let mut p = scalar_params(1.5);
    let mut s = AdamState::new(&p);
    let cfg = AdamConfig::default();
    let g0 = grads_of(&p, 0.0);
    adam_step(&mut p, &g0, &mut s, 0.1, &cfg).unwrap();
    assert_eq!(p.tensors()[0].data(), &[1.5]);
    assert_eq!(s.first[0].data(), &[0.0]);

    s.first[0].data_mut()[0] = 1.0;
    s.second[0].data_mut()[0] = 4.0;
    let g0 = grads_of(&p, 0.0);
    adam_step(&mut p, &g0, &mut s, 0.1, &cfg).unwrap();
    assert!((s.first[0].data()[0] - 0.9).abs() < 1e-15);
    assert!((s.second[0].data()[0] - 4.0 * 0.999).abs() < 1e-15);
}

#[test]
fn constant_gradient_follows_closed_form() {
    // With a constant gradient g both bias-corrected moments are exact:
    // m̂ = g, v̂ = g², so each step moves by lr·g/(|g| + ε).
    let (g, lr, theta0) = (0.37, 0.01, 2.0);
    let cfg = AdamConfig::default();
    let mut p = scalar_params(theta0);
    let mut s = AdamState::new(&p);
    for t in 1..=50 {
        let gt = grads_of(&p, g);
        adam_step(&mut p, &gt, &mut s, lr, &cfg).unwrap();
        let expected = theta0 - t as f64 * lr * g / (g.abs() + cfg.eps);
        assert!((p.tensors()[0].data()[0] - expected).abs() < 1e-12, "step {t}");
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let mut m = active_model(2, 2, 4, 3);
    let before = m.params().clone();
    let data = toy_ensemble(5, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = sample_batch(&data, None, 64, &mut rng);
    let (_, grads) = batch_gradients(&m, &batch).unwrap();
    let mut state = AdamState::new(m.params());
    adam_step(m.params_mut(), &grads, &mut state, 0.0, &AdamConfig::default()).unwrap();
    assert_eq!(m.params().tensors(), before.tensors());
}

#[test]
fn non_finite_gradient_names_parameter() {
    let mut p = ParameterSet::new();
    p.add("a", Tensor::scalar(1.0)).unwrap();
    p.add("b", Tensor::row(vec![1.0, 2.0])).unwrap();
    let mut s = AdamState::new(&p);
    let mut g = GradientMap::zeros_like(&p);
    g.get_mut(p.id("b").unwrap()).data_mut()[1] = f64::NAN;
    match adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()) {
        Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "b"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(s.step, 0);
}

#[test]
fn mse_examples() {
    assert_eq!(mse_loss(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
    assert_eq!(mse_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
    assert!(mse_loss::<f64>(&[], &[]).is_err());
    assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn mse_gradient_is_two_residual_over_b() {
    let mut p = ParameterSet::new();
    p.add("pred", Tensor::matrix(4, 1, vec![0.3, -1.2, 2.0, 0.7]).unwrap()).unwrap();
    let target = Tensor::matrix(4, 1, vec![0.1, 0.4, -0.5, 0.7]).unwrap();
    let f = |g: &mut Graph<f64>, params: &ParameterSet<f64>| {
        let pred = g.param(params, params.id("pred").unwrap());
        let t = g.constant(target.clone());
        mse(g, pred, t)
    };
    let report = fd_check(f, &p, 1e-6).unwrap();
    assert!(report.max_rel_err < 1e-8, "{report:?}");
    let (_, grads) = fainr_core::autodiff::gradient_of(&f, &p).unwrap();
    let expected: Vec<f64> = [0.2, -1.6, 2.5, 0.0].iter().map(|r| 2.0 * r / 4.0).collect();
    for (a, b) in grads.tensors()[0].data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

fn grid_ensemble(members: usize, coords: usize) -> NormalizedEnsemble<f64> {
    let xs: Vec<f64> = (0..coords).map(|i| -1.0 + 2.0 * i as f64 / (coords - 1) as f64).collect();
    NormalizedEnsemble {
        coords: Tensor::matrix(coords, 1, xs).unwrap(),
        params: (0..members).map(|j| vec![j as f64 / members as f64]).collect(),
        fields: (0..members).map(|j| (0..coords).map(|i| (i * 10 + j) as f64).collect()).collect(),
        stats: NormalizationStats {
            coord_ranges: vec![[-1.0, 1.0]],
            param_ranges: vec![[0.0, 1.0]],
            field_range: [0.0, 1.0],
        },
    }
}

#[test]
fn single_member_batches_draw_only_that_member() {
    let data = grid_ensemble(1, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = sample_batch(&data, None, 500, &mut rng);
    assert_eq!(batch.len(), 1);
    assert_eq!(batch[0].member, 0);
    assert_eq!(batch[0].len(), 500);
    for (k, &i) in batch[0].rows.iter().enumerate() {
        assert_eq!(batch[0].targets[k], data.fields[0][i]);
        assert_eq!(batch[0].coords.row_slice(k), data.coords.row_slice(i));
    }
}

/// Upper `1 - alpha` quantile of χ²(k) by the Wilson–Hilferty approximation.
fn chi2_quantile(k: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn sampling_is_uniform_over_members_and_coordinates() {
    let data = grid_ensemble(4, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = vec![0usize; 400];
    let draws = 100_000;
    for _ in 0..10 {
        for mb in sample_batch(&data, None, draws / 10, &mut rng) {
            for &i in &mb.rows {
                counts[mb.member * 100 + i] += 1;
            }
        }
    }
    let expected = draws as f64 / 400.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // z for alpha = 0.01.
    let critical = chi2_quantile(399.0, 2.326_348);
    assert!(stat < critical, "chi2 {stat} >= {critical}");
}

#[test]
fn fixed_seed_repeats_batches() {
    let data = grid_ensemble(3, 50);
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..5).map(|_| sample_batch(&data, None, 64, &mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(draw(9), draw(9));
    assert_ne!(draw(9), draw(10));
}

#[test]
fn pooled_sampling_stays_in_pool() {
    let data = grid_ensemble(2, 50);
    let pool: Vec<usize> = (0..50).filter(|i| i % 3 == 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for mb in sample_batch(&data, Some(&pool), 300, &mut rng) {
        assert!(mb.rows.iter().all(|i| i % 3 == 0));
    }
}

#[test]
fn grouped_batch_equals_per_sample_evaluation() {
    let m = active_model(3, 2, 5, 17);
    let data = toy_ensemble(5, 3, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let batch = sample_batch(&data, None, 48, &mut rng);
    let (loss, grads) = batch_gradients(&m, &batch).unwrap();

    let mut flat_loss = 0.0;
    let mut flat = GradientMap::zeros_like(m.params());
    for mb in &batch {
        for k in 0..mb.len() {
            let single = MemberBatch {
                member: mb.member,
                rows: vec![mb.rows[k]],
                coords: Tensor::row(mb.coords.row_slice(k).to_vec()),
                params: mb.params.clone(),
                targets: vec![mb.targets[k]],
            };
            let mut g = Graph::new();
            let l = fainr_core::train::batch_loss_graph(&mut g, &m, &single, 48).unwrap();
            let gr = g.backward(l).unwrap();
            flat_loss += g.value(l).data()[0];
            flat.accumulate(&g.param_gradients(&gr, m.params()));
        }
    }
    assert!((loss - flat_loss).abs() < 1e-12);
    for (a, b) in grads.tensors().iter().zip(flat.tensors()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn full_pipeline_gradient_passes_fd_check() {
    let m = active_model(2, 2, 8, 5);
    let data = toy_ensemble(5, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = sample_batch(&data, None, 12, &mut rng);
    let report = common::pipeline_fd_error(&m, &batch, 1e-3);
    assert!(report.max_rel_err < 1e-5, "{report:?}");
}

fn short_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 128,
        steps,
        learning_rate: 3e-3,
        decay_milestones: Some(vec![10, 25]),
        validation_interval: 10,
        probe_size: 256,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn seeded_runs_are_bitwise_identical() {
    let data = common::toy_ensemble32(6, 3, 1);
    let run = || {
        let mut m = FaInrModel::<f32>::new(toy_config(2, 2, 4, 1)).unwrap();
        let td = TrainingData {
            train: &data,
            pool: None,
            validation: None,
        };
        let r = Trainer::new(short_config(30, 4)).run(&mut m, &td).unwrap();
        (r.final_loss.to_bits(), m.params().tensors().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn training_lowers_probe_loss_and_logs() {
    let data = toy_ensemble(6, 3, 2);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("train.csv");
    let mut m = active_model(2, 2, 8, 2);
    let mut saves = Vec::new();
    let cfg = TrainConfig {
        checkpoint_interval: 15,
        ..short_config(40, 2)
    };
    let report = Trainer::new(cfg)
        .log_to(&log)
        .on_checkpoint(|_, s| {
            saves.push(s.step);
            Ok(())
        })
        .run(
            &mut m,
            &TrainingData {
                train: &data,
                pool: None,
                validation: Some(&data),
            },
        )
        .unwrap();
    assert!(report.final_probe_loss < report.initial_probe_loss);
    assert_eq!(report.step, 40);
    assert_eq!(saves, vec![15, 30, 40]);
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1].starts_with("10,"));
    assert_eq!(lines[4].split(',').count(), 5);
    assert!(report.records.iter().all(|r| r.val_psnr.is_some() && r.loss.is_finite()));
    assert!((report.records[1].lr - 3e-3 * 0.9).abs() < 1e-12);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = toy_ensemble(6, 3, 3);
    let td = TrainingData {
        train: &data,
        pool: None,
        validation: None,
    };
    let mut straight = active_model(2, 2, 6, 3);
    Trainer::new(short_config(30, 7)).run(&mut straight, &td).unwrap();

    let mut resumed = active_model(2, 2, 6, 3);
    let mut saved = None;
    Trainer::new(short_config(12, 7))
        .on_checkpoint(|_, s| {
            saved = Some(s.clone());
            Ok(())
        })
        .run(&mut resumed, &td)
        .unwrap();
    let state = saved.unwrap();
    assert_eq!(state.step, 12);
    let report = Trainer::new(short_config(30, 7)).resume(state).run(&mut resumed, &td).unwrap();
    assert_eq!(report.records.first().map(|r| r.step), Some(20));
    assert_eq!(straight.params().tensors(), resumed.params().tensors());
}

#[test]
fn constant_field_is_fit_exactly() {
    let n = 64;
    let xs: Vec<f64> = (0..n).flat_map(|i| {
        let t = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
        [t, -t, 0.5 * t]
    }).collect();
    let data = NormalizedEnsemble {
        coords: Tensor::matrix(n, 3, xs).unwrap(),
        params: vec![vec![0.5, 0.5]],
        fields: vec![vec![0.37; n]],
        stats: NormalizationStats {
            coord_ranges: vec![[-1.0, 1.0]; 3],
            param_ranges: vec![[0.0, 1.0]; 2],
            field_range: [0.0, 1.0],
        },
    };
    let mut m = FaInrModel::<f64>::new(toy_config(1, 1, 8, 0)).unwrap();
    let cfg = TrainConfig {
        batch_size: 64,
        steps: 2000,
        learning_rate: 1e-3,
        validation_interval: 0,
        probe_size: 256,
        ..TrainConfig::default()
    };
    let report = Trainer::new(cfg)
        .run(
            &mut m,
            &TrainingData {
                train: &data,
                pool: None,
                validation: None,
            },
        )
        .unwrap();
    assert!(report.final_probe_loss < 1e-6, "{}", report.final_probe_loss);
}

#[test]
fn runaway_learning_rate_is_reported_as_divergence() {
    let data = toy_ensemble(5, 2, 4);
    let mut m = active_model(2, 2, 4, 4);
    let cfg = TrainConfig {
        learning_rate: 50.0,
        divergence_factor: 10.0,
        ..short_config(40, 4)
    };
    let err = Trainer::new(cfg)
        .run(
            &mut m,
            &TrainingData {
                train: &data,
                pool: None,
                validation: None,
            },
        )
        .unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
}

#[test]
fn utilization_of_one_slot_is_total() {
    let m = active_model(2, 2, 1, 8);
    let data = toy_ensemble(5, 2, 8);
    let r = key_utilization(&m, &data, 300, 1).unwrap();
    let total: f64 = r.mass.iter().flatten().sum();
    assert!((total - 300.0 * 2.0).abs() < 1e-9);
    for (h, mass) in r.histograms.iter().zip(&r.mass) {
        if mass[0] > 0.0 {
            assert_eq!(h, &vec![1.0]);
        }
    }
}

#[test]
fn identical_keys_give_flat_histograms() {
    let mut m = FaInrModel::<f64>::new(toy_config(3, 2, 6, 9)).unwrap();
    for e in 0..3 {
        let row = vec![0.2, -0.3, 0.1, 0.4, 0.0];
        common::set(&mut m, &format!("expert{e}.keys"), Tensor::from_rows(&vec![row; 6]).unwrap());
    }
    let data = toy_ensemble(5, 2, 9);
    let r = key_utilization(&m, &data, 200, 2).unwrap();
    assert!((r.mass.iter().flatten().sum::<f64>() - 400.0).abs() < 1e-9);
    for (h, ev) in r.histograms.iter().zip(&r.evenness) {
        if h.iter().sum::<f64>() > 0.0 {
            assert!(h.iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-12));
            assert!((ev - 1.0).abs() < 1e-12);
        }
    }
}

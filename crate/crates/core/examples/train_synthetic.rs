//! Trains FA-INR and a matched coordinate MLP on the default synthetic
//! ensemble and prints test PSNR for both.
//!
//! `cargo run --release -p fainr-core --example train_synthetic -- [steps] [batch] [lr] [experts] [slots] [baseline 0|1]`

use fainr_core::data::{make_ensemble, param_grid, random_params, NormalizationStats, SyntheticSpec};
use fainr_core::model::{BaselineConfig, CoordinateMlp, FaInrModel, ModelConfig};
use fainr_core::train::{validation_psnr, TrainConfig, Trainer, TrainingData};
use fainr_core::Surrogate;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> fainr_core::Result<()> {
    env_logger::init();
    let steps: usize = arg(1, 3000);
    let batch: usize = arg(2, 2048);
    let lr: f64 = arg(3, 2e-3);
    let experts: usize = arg(4, 4);
    let slots: usize = arg(5, 64);
    let baseline: u8 = arg(6, 1);

    let spec = SyntheticSpec::default();
    let ranges = spec.param_ranges.clone();
    let mut params = param_grid(&ranges, &[5, 4]);
    params.extend(random_params(&ranges, 5, 0.1, 11));
    let ds = make_ensemble(&spec, &params)?;
    let train_idx: Vec<usize> = (0..20).collect();
    let test_idx: Vec<usize> = (20..25).collect();
    let stats = NormalizationStats::fit(&ds, Some(&train_idx))?;
    let all = stats.apply::<f32>(&ds);
    let train = all.subset(&train_idx, None);
    let test = all.subset(&test_idx, None);

    let config = ModelConfig {
        experts,
        memory_slots: slots,
        top_k: 2.min(experts),
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        steps,
        batch_size: batch,
        learning_rate: lr,
        validation_interval: steps / 5,
        ..TrainConfig::default()
    };
    let data = TrainingData {
        train: &train,
        pool: None,
        validation: None,
    };
    let mut model = FaInrModel::<f32>::new(config.clone())?;
    let count = model.parameters().scalar_count();
    let report = Trainer::new(tc.clone()).run(&mut model, &data)?;
    let test_psnr = validation_psnr(&model, &test)?;
    let train_psnr = validation_psnr(&model, &train.subset(&[0, 7, 13], None))?;
    println!(
        "fainr params={count} time={:.1}s loss={:.3e} train_psnr={train_psnr:.2} test_psnr={test_psnr:.2}",
        report.elapsed_s, report.final_loss
    );

    if baseline == 0 {
        return Ok(());
    }
    let bc = BaselineConfig::matched(3, 2, 3, count, 0);
    let mut mlp = CoordinateMlp::<f32>::new(bc)?;
    let report = Trainer::new(tc).run(&mut mlp, &data)?;
    let test_psnr = validation_psnr(&mlp, &test)?;
    println!(
        "mlp params={} time={:.1}s loss={:.3e} test_psnr={test_psnr:.2}",
        mlp.parameters().scalar_count(),
        report.elapsed_s,
        report.final_loss
    );
    Ok(())
}

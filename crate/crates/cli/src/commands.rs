use std::fs;
use std::path::{Path, PathBuf};

use fainr_core::analysis::{
    expert_map, per_expert_frequency, region_coords, sensitivity_sweep, Adjacency, ExpertMap, Region, SweepSpec,
};
use fainr_core::data::{
    load, make_ensemble, param_grid, random_params, save, spatial_split, EnsembleDataset, NormalizationStats,
    SyntheticSpec,
};
use fainr_core::metrics::{evaluate, MetricReport};
use fainr_core::model::{load_checkpoint, load_checkpoint_with_state, save_checkpoint_with_state, FaInrModel};
use fainr_core::train::{key_utilization, Trainer, TrainingData};
use fainr_server::{ServiceOptions, Session};
use serde::Serialize;
use serde_json::json;

use crate::config::resolve;
use crate::error::{CliError, CliResult};
use crate::{AnalyzeArgs, EvalArgs, ModelInputs, ServeArgs, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const STATS_FILE: &str = "stats.json";
pub const LOG_FILE: &str = "train_log.csv";

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn echo(config: &impl Serialize) -> CliResult<()> {
    println!("resolved config:\n{}", serde_json::to_string_pretty(config)?);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| data_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| data_err(dir, e))
}

fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{what} directory {} does not exist", path.display())))
    }
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn check_members(list: &[usize], ds: &EnsembleDataset, flag: &str) -> CliResult<()> {
    match list.iter().find(|&&j| j >= ds.members.len()) {
        Some(j) => Err(usage(format!("{flag}: member {j} out of range ({} members)", ds.members.len()))),
        None => Ok(()),
    }
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let dims: Vec<usize> = a
        .resolution
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| usage(format!("bad resolution `{s}`"))))
        .collect::<CliResult<_>>()?;
    let dims = if dims.len() == 1 { vec![dims[0]; 3] } else { dims };
    if dims.iter().any(|&n| n == 0) || dims.len() > 3 {
        return Err(usage(format!("grid size {dims:?} must have 1 to 3 positive extents")));
    }
    let ranges: Vec<(f64, f64)> = a
        .param_ranges
        .split(',')
        .map(|pair| {
            let (lo, hi) = pair.split_once(':').ok_or_else(|| usage(format!("range `{pair}` is not lo:hi")))?;
            let lo: f64 = lo.trim().parse().map_err(|_| usage(format!("bad range `{pair}`")))?;
            let hi: f64 = hi.trim().parse().map_err(|_| usage(format!("bad range `{pair}`")))?;
            if !(hi > lo) {
                return Err(usage(format!("range `{pair}` must be increasing")));
            }
            Ok((lo, hi))
        })
        .collect::<CliResult<_>>()?;
    let grid: Vec<usize> = a
        .grid
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| usage(format!("bad grid count `{s}`"))))
        .collect::<CliResult<_>>()?;
    if grid.len() != ranges.len() || grid.contains(&0) {
        return Err(usage(format!("--grid needs {} positive counts", ranges.len())));
    }
    if !(0.0..0.5).contains(&a.random_margin) {
        return Err(usage("--random-margin must lie in [0, 0.5)"));
    }
    echo(&json!({
        "out": a.out,
        "resolution": dims,
        "blobs": a.blobs,
        "seed": a.seed,
        "param_ranges": ranges,
        "grid": grid,
        "random": a.random,
        "random_margin": a.random_margin,
        "random_seed": a.random_seed,
    }))?;
    let spec = SyntheticSpec::generate(dims, ranges.clone(), a.blobs, a.seed);
    let mut params = param_grid(&ranges, &grid);
    params.extend(random_params(&ranges, a.random, a.random_margin, a.random_seed));
    let ds = make_ensemble(&spec, &params)?;
    save(&ds, &a.out)?;
    write_json(&a.out.join("synthetic_spec.json"), &spec)?;
    println!("wrote {} members of {} points to {}", ds.members.len(), ds.len(), a.out.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    require_dir(&a.data, "data")?;
    if let Some(r) = &a.resume {
        require_file(r, "resume checkpoint")?;
    }
    let mut cfg = resolve(
        a.config.as_deref(),
        vec![
            ("model.experts", a.experts.map(|x| json!(x))),
            ("model.memory_slots", a.slots.map(|x| json!(x))),
            ("model.top_k", a.top_k.map(|x| json!(x))),
            ("model.seed", a.seed.map(|x| json!(x))),
            ("train.seed", a.seed.map(|x| json!(x))),
            ("train.steps", a.steps.map(|x| json!(x))),
            ("train.batch_size", a.batch_size.map(|x| json!(x))),
            ("train.learning_rate", a.lr.map(|x| json!(x))),
            ("train.validation_interval", a.validation_interval.map(|x| json!(x))),
            ("train.checkpoint_interval", a.checkpoint_interval.map(|x| json!(x))),
            ("data.train_members", a.train_members.map(|x| json!(x.0))),
            ("data.validation_members", a.validation_members.map(|x| json!(x.0))),
            ("data.coord_split", a.coord_split.map(|x| json!(x))),
            ("data.split_seed", a.split_seed.map(|x| json!(x))),
        ],
    )?;
    let ds = load(&a.data)?;
    cfg.model.coord_dim = ds.coord_dim;
    cfg.model.param_dim = ds.param_dim;

    let resumed = match &a.resume {
        Some(path) => {
            let (model, state) = load_checkpoint_with_state::<f32>(path)?;
            let state = state.ok_or_else(|| usage(format!("{} holds no optimizer state", path.display())))?;
            let asked = a.config.is_some() || a.experts.is_some() || a.slots.is_some() || a.top_k.is_some();
            if asked && model.config() != &cfg.model {
                log::warn!("keeping the architecture stored in {}", path.display());
            }
            cfg.model = model.config().clone();
            Some((model, state))
        }
        None => None,
    };
    cfg.model.validate()?;
    cfg.train.validate()?;
    echo(&cfg)?;

    let train_idx = cfg.data.train_members.clone().unwrap_or_else(|| (0..ds.members.len()).collect());
    check_members(&train_idx, &ds, "train_members")?;
    if let Some(v) = &cfg.data.validation_members {
        check_members(v, &ds, "validation_members")?;
    }
    let stats = NormalizationStats::fit(&ds, Some(&train_idx))?;
    let all = stats.apply::<f32>(&ds);
    let train = all.subset(&train_idx, None);
    let validation = cfg.data.validation_members.as_ref().map(|v| all.subset(v, None));
    let pool = match cfg.data.coord_split {
        Some(r) => Some(spatial_split(ds.len(), r, cfg.data.split_seed)?.train),
        None => None,
    };

    create_dir(&a.out)?;
    write_json(&a.out.join("run_config.json"), &cfg)?;
    write_json(&a.out.join(STATS_FILE), &stats)?;
    let log_path = a.out.join(LOG_FILE);
    if resumed.is_none() && log_path.exists() {
        fs::remove_file(&log_path).map_err(|e| data_err(&log_path, e))?;
    }

    let ckpt = a.out.join(CHECKPOINT_FILE);
    let (mut model, state) = match resumed {
        Some((m, s)) => (m, Some(s)),
        None => (FaInrModel::<f32>::new(cfg.model.clone())?, None),
    };
    let mut trainer = Trainer::new(cfg.train.clone())
        .log_to(&log_path)
        .on_checkpoint(|m: &FaInrModel<f32>, s| save_checkpoint_with_state(m, Some(s), &ckpt));
    if let Some(s) = state {
        trainer = trainer.resume(s);
    }
    let data = TrainingData {
        train: &train,
        pool: pool.as_deref(),
        validation: validation.as_ref(),
    };
    let mut report = trainer.run(&mut model, &data)?;
    report.utilization = Some(key_utilization(&model, &train, 4096, cfg.train.seed)?);
    write_json(&a.out.join("report.json"), &report)?;
    let last = report.records.last();
    println!(
        "step {} loss {:.4e} val_psnr {} elapsed {:.1}s -> {}",
        report.step,
        report.final_loss,
        last.and_then(|r| r.val_psnr).map_or("-".into(), |p| format!("{p:.2}")),
        report.elapsed_s,
        ckpt.display()
    );
    Ok(())
}

struct Loaded {
    model: FaInrModel<f64>,
    stats: NormalizationStats,
    ds: EnsembleDataset,
    stats_path: PathBuf,
}

fn load_inputs(inputs: &ModelInputs) -> CliResult<Loaded> {
    require_file(&inputs.checkpoint, "checkpoint")?;
    require_dir(&inputs.data, "data")?;
    let stats_path = inputs.stats.clone().unwrap_or_else(|| {
        inputs
            .checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(STATS_FILE)
    });
    require_file(&stats_path, "statistics file")?;
    let text = fs::read_to_string(&stats_path).map_err(|e| data_err(&stats_path, e))?;
    let stats: NormalizationStats = serde_json::from_str(&text).map_err(|e| data_err(&stats_path, e))?;
    let model = load_checkpoint::<f64>(&inputs.checkpoint)?;
    let ds = load(&inputs.data)?;
    let cfg = model.config();
    if cfg.coord_dim != ds.coord_dim || cfg.param_dim != ds.param_dim {
        return Err(CliError::Data(format!(
            "checkpoint expects d = {}, m = {} but the dataset has d = {}, m = {}",
            cfg.coord_dim, cfg.param_dim, ds.coord_dim, ds.param_dim
        )));
    }
    if stats.coord_ranges.len() != ds.coord_dim || stats.param_ranges.len() != ds.param_dim {
        return Err(CliError::Data(format!("{} does not match the dataset", stats_path.display())));
    }
    Ok(Loaded {
        model,
        stats,
        ds,
        stats_path,
    })
}

fn top1_map(model: &FaInrModel<f32>, stats: &NormalizationStats, ds: &EnsembleDataset) -> CliResult<ExpertMap> {
    Ok(expert_map(model, &stats.coords_tensor::<f32>(ds), false)?)
}

fn print_report(label: &str, r: &MetricReport) {
    let ssim = r.mean_ssim.map_or("-".into(), |s| format!("{s:.4}"));
    println!("{label}: psnr {:.3} dB, md {:.4e}, ssim {ssim}", r.mean_psnr, r.mean_md);
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let l = load_inputs(&a.inputs)?;
    let members = a.members.clone().map(|l| l.0).unwrap_or_else(|| (0..l.ds.members.len()).collect());
    check_members(&members, &l.ds, "members")?;
    echo(&json!({
        "checkpoint": a.inputs.checkpoint,
        "data": a.inputs.data,
        "stats": l.stats_path,
        "members": members,
        "coord_split": a.coord_split,
        "split_seed": a.split_seed,
        "out": a.out,
    }))?;
    let model = l.model.cast::<f32>();
    let map = top1_map(&model, &l.stats, &l.ds)?;
    let experts = Some((map.assignment.as_slice(), map.experts));
    let report = evaluate(&model, &l.ds, &l.stats, &members, None, experts)?;
    print_report("all coordinates", &report);

    let mut split_reports = Vec::new();
    if let Some(r) = a.coord_split {
        let split = spatial_split(l.ds.len(), r, a.split_seed)?;
        for (name, rows) in [("trained_coords", &split.train), ("unseen_coords", &split.test)] {
            if rows.is_empty() {
                continue;
            }
            let rep = evaluate(&model, &l.ds, &l.stats, &members, Some(rows), experts)?;
            print_report(name, &rep);
            split_reports.push((name, rep));
        }
    }
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_text(&out.join("report.json"), &report.to_json()?)?;
        write_text(&out.join("report.csv"), &report.to_csv())?;
        if let Some(csv) = report.per_expert_csv() {
            write_text(&out.join("per_expert.csv"), &csv)?;
        }
        for (name, rep) in &split_reports {
            write_text(&out.join(format!("report_{name}.json")), &rep.to_json()?)?;
        }
    }
    Ok(())
}

fn parse_region(text: &str) -> CliResult<Region> {
    if text == "all" {
        return Ok(Region::All);
    }
    text.strip_prefix("expert:")
        .and_then(|e| e.parse().ok())
        .map(Region::Expert)
        .ok_or_else(|| usage(format!("region `{text}` is neither `all` nor `expert:<id>`")))
}

pub fn analyze(a: AnalyzeArgs) -> CliResult<()> {
    let l = load_inputs(&a.inputs)?;
    let m = l.ds.param_dim;
    let params = a.params.clone().map(|l| l.0).unwrap_or_else(|| (0..m).collect());
    if let Some(&s) = params.iter().find(|&&s| s >= m) {
        return Err(usage(format!("parameter index {s} out of range (m = {m})")));
    }
    let region = parse_region(&a.region)?;
    if a.steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    if let Some(crate::config::List(r)) = &a.range {
        if r.len() != 2 || params.len() != 1 {
            return Err(usage("--range takes `lo,hi` and needs exactly one --params entry"));
        }
    }
    let base = a
        .base
        .clone()
        .map(|l| l.0)
        .unwrap_or_else(|| l.stats.param_ranges.iter().map(|r| 0.5 * (r[0] + r[1])).collect());
    if base.len() != m {
        return Err(usage(format!("--base needs {m} values")));
    }
    echo(&json!({
        "checkpoint": a.inputs.checkpoint,
        "data": a.inputs.data,
        "stats": l.stats_path,
        "out": a.out,
        "params": params,
        "region": region,
        "steps": a.steps,
        "range": a.range.as_ref().map(|l| &l.0),
        "base": base,
        "member": a.member,
    }))?;
    create_dir(&a.out)?;

    let model32 = l.model.cast::<f32>();
    let map = top1_map(&model32, &l.stats, &l.ds)?;
    let dims = l.ds.lattice.clone().unwrap_or_else(|| vec![l.ds.len()]);
    write_text(&a.out.join("expert_map.csv"), &map.to_csv())?;
    let bytes = map.to_u8()?;
    let raw = a.out.join("expert_map.u8");
    fs::write(&raw, bytes).map_err(|e| data_err(&raw, e))?;
    write_json(
        &a.out.join("expert_map.json"),
        &json!({"dims": dims, "experts": map.experts, "counts": map.counts(), "file": "expert_map.u8"}),
    )?;
    println!("expert counts {:?}", map.counts());

    if !l.ds.members.is_empty() {
        if a.member >= l.ds.members.len() {
            return Err(usage(format!("--member {} out of range", a.member)));
        }
        let graph = Adjacency::for_dataset(&l.ds)?;
        let values: Vec<f64> = l.ds.members[a.member].values.iter().map(|&v| v as f64).collect();
        let freq = per_expert_frequency(&graph, &map.assignment, map.experts, &values)?;
        write_json(&a.out.join("frequency.json"), &freq)?;
    }

    let rows = region
        .rows(l.ds.len(), Some(&map))
        .map_err(|e| usage(e.to_string()))?;
    let coords = region_coords(&l.stats.coords_tensor::<f64>(&l.ds), &rows)?;
    let label = match region {
        Region::Expert(e) => format!("expert{e}"),
        _ => "all".into(),
    };
    for &s in &params {
        let r = l.stats.param_ranges[s];
        let range = a.range.as_ref().map_or((r[0], r[1]), |l| (l.0[0], l.0[1]));
        let spec = SweepSpec {
            param: s,
            range,
            steps: a.steps,
            base: base.clone(),
        };
        let curve = sensitivity_sweep(&l.model, &coords, &l.stats, &spec)?;
        let name = &l.ds.param_names[s];
        write_text(&a.out.join(format!("sensitivity_{name}_{label}.csv")), &curve.to_csv())?;
        println!(
            "sensitivity {name} over {label} ({} points): max tape/fd discrepancy {:.2e}",
            curve.region_size, curve.max_rel_discrepancy
        );
    }
    Ok(())
}

pub fn serve(a: ServeArgs) -> CliResult<()> {
    let mut l = load_inputs(&a.inputs)?;
    if a.no_ground_truth {
        l.ds = l.ds.select_members(&[]);
    }
    let options = ServiceOptions {
        max_sweep_steps: a.max_sweep_steps,
        allowed_origins: a.allow_origin.clone(),
        ..ServiceOptions::default()
    };
    echo(&json!({
        "checkpoint": a.inputs.checkpoint,
        "data": a.inputs.data,
        "stats": l.stats_path,
        "host": a.host,
        "port": a.port,
        "max_sweep_steps": a.max_sweep_steps,
        "allow_origin": a.allow_origin,
        "ground_truth": !l.ds.members.is_empty(),
    }))?;
    let session = Session::new(l.model, l.stats, l.ds, options).map_err(|e| CliError::Data(e.to_string()))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Data(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| CliError::Data(format!("cannot bind {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Data(e.to_string()))?;
        println!("listening on http://{addr}");
        fainr_server::serve(listener, session)
            .await
            .map_err(|e| CliError::Data(format!("server stopped: {e}")))
    })
}

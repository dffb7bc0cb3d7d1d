use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fainr_core::analysis::{expert_map, per_expert_frequency, region_coords, sensitivity_sweep, Adjacency, SweepSpec};
use fainr_core::data::{lattice_slice, make_ensemble, param_grid, EnsembleDataset, NormalizationStats, SyntheticSpec};
use fainr_core::metrics::per_expert_psnr;
use fainr_core::model::{FaInrModel, ModelConfig};
use fainr_core::{predict, Tensor};
use fainr_server::wire::{decode_f32, encode_f32, ExpertSummary, FrequencySource, SensitivityResponse};
use fainr_server::{router, ServiceOptions, Session, SessionError};
use serde_json::{json, Value};
use tower::ServiceExt;

const DIMS: [usize; 3] = [6, 7, 5];

fn config() -> ModelConfig {
    ModelConfig {
        coord_dim: 3,
        param_dim: 2,
        experts: 3,
        memory_slots: 8,
        query_feature_dim: 6,
        key_dim: 5,
        value_dim: 4,
        param_embed_dim: 3,
        top_k: 2,
        gate_grid_res: 4,
        gate_feat_dim: 3,
        encoder_hidden: vec![8],
        param_embed_hidden: 4,
        adapter_hidden: vec![6],
        gate_hidden: vec![5],
        decoder_hidden: vec![6],
        fourier_bands: 0,
        balance_weight: 0.0,
        seed: 3,
    }
}

/// Untrained model with an active adapter and a spread-out gate, so both
/// parameters and routing matter.
fn model() -> FaInrModel<f64> {
    let mut m = FaInrModel::<f64>::new(config()).unwrap();
    let ids: Vec<_> = m.params().ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let name = m.params().name(id).to_string();
        let scale = if name.starts_with("gate.grid") {
            1.5
        } else if name.starts_with("adapter.mlp.1") {
            0.5
        } else {
            continue;
        };
        for (j, v) in m.params_mut().get_mut(id).data_mut().iter_mut().enumerate() {
            *v = scale * (((k * 131 + j * 71) % 97) as f64 / 48.0 - 1.0);
        }
    }
    m
}

fn dataset() -> EnsembleDataset {
    let spec = SyntheticSpec::generate(DIMS.to_vec(), vec![(1.0, 3.0), (0.0, 0.5)], 3, 5);
    let mut ds = make_ensemble(&spec, &param_grid(&spec.param_ranges, &[2, 2])).unwrap();
    ds.param_names = vec!["viscosity".into(), "forcing".into()];
    ds
}

fn session_with(ds: EnsembleDataset, stats: NormalizationStats, options: ServiceOptions) -> Session {
    Session::new(model(), stats, ds, options).unwrap()
}

fn app() -> (Router, EnsembleDataset, NormalizationStats) {
    let ds = dataset();
    let stats = NormalizationStats::fit(&ds, None).unwrap();
    let s = session_with(ds.clone(), stats.clone(), ServiceOptions::default());
    (router(Arc::new(s)), ds, stats)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

/// Library prediction in physical units at physical parameters.
fn library_values(stats: &NormalizationStats, coords: &Tensor<f32>, p: &[f64]) -> Vec<f64> {
    let m = model().cast::<f32>();
    predict(&m, coords, &stats.params_unit::<f32>(p))
        .unwrap()
        .iter()
        .map(|&u| stats.field_from_unit(u as f64))
        .collect()
}

fn assert_error(v: &Value, code: &str, field: Option<&str>) {
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
    match field {
        Some(f) => assert_eq!(v["field"], f, "{v}"),
        None => assert!(v.get("field").is_some()),
    }
}

#[tokio::test]
async fn info_reports_model_and_ranges() {
    let (app, ds, _) = app();
    let (status, v) = get(&app, "/info").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["experts"], 3);
    assert_eq!(v["model"]["experts"], 3);
    assert_eq!(v["lattice"], json!(DIMS));
    assert_eq!(v["paramNames"], json!(["viscosity", "forcing"]));
    let manifest = fainr_core::data::format::manifest_of(&ds);
    assert_eq!(v["paramRanges"], json!(manifest.param_ranges));
    assert_eq!(v["fieldRange"], json!(manifest.field_range));
    assert_eq!(v["groundTruth"], true);
    assert_eq!(v["maxSweepSteps"], 64);
}

#[tokio::test]
async fn single_coordinate_matches_library_forward() {
    let (app, ds, stats) = app();
    let x = ds.coord(17).iter().map(|&v| v as f64).collect::<Vec<_>>();
    let p = [1.7, 0.3];
    let (status, v) = post(&app, "/predict", json!({"coords": [x], "params": p})).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["count"], 1);
    let got = floats(&v["values"]);

    let m = model().cast::<f32>();
    let unit: Vec<f32> = (0..3).map(|a| stats.coord_to_unit(a, x[a]) as f32).collect();
    let (y, _) = m.forward(&unit, &stats.params_unit::<f32>(&p)).unwrap();
    let expected = stats.field_from_unit(y as f64);
    assert!((got[0] - expected).abs() <= 1e-6 * stats.field_span(), "{} vs {expected}", got[0]);
}

#[tokio::test]
async fn out_of_range_parameter_names_the_axis() {
    let (app, ds, _) = app();
    let x: Vec<f64> = ds.coord(0).iter().map(|&v| v as f64).collect();
    let (status, v) = post(&app, "/predict", json!({"coords": [x], "params": [2.0, 0.9]})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "out_of_range", Some("forcing"));
    assert!(v["message"].as_str().unwrap().contains("forcing"));

    let (status, v) = post(&app, "/predict", json!({"coords": [x], "params": [2.0]})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "wrong_length", Some("params"));

    let (status, v) = post(&app, "/predict", json!({"coords": [[0.0, 0.0, 9.0]], "params": [2.0, 0.2]})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "out_of_range", Some("coords"));
}

#[tokio::test]
async fn large_batch_and_binary_path_agree() {
    let (app, ds, stats) = app();
    let n = 10_000;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| ds.coord(i % ds.len()).iter().map(|&v| v as f64).collect()).collect();
    let p = [2.5, 0.1];
    let (status, v) = post(&app, "/predict", json!({"coords": rows, "params": p})).await;
    assert_eq!(status, StatusCode::OK);
    let plain = floats(&v["values"]);
    assert_eq!(plain.len(), n);

    let packed: Vec<f32> = rows.iter().flatten().map(|&v| v as f32).collect();
    let (status, v) = post(&app, "/predict?binary=true", json!({"coords": encode_f32(&packed), "params": p})).await;
    assert_eq!(status, StatusCode::OK);
    let bin = decode_f32(v["values"].as_str().unwrap(), "values").unwrap();
    assert_eq!(bin.len(), n);
    for (a, b) in plain.iter().zip(&bin) {
        assert_eq!(*a as f32, *b);
    }

    let unit = stats.coords_tensor::<f32>(&ds);
    let lib = library_values(&stats, &unit, &p);
    for i in 0..ds.len() {
        assert!((plain[i] - lib[i]).abs() <= 1e-6 * stats.field_span());
    }
}

#[tokio::test]
async fn slice_matches_lattice_and_predict() {
    let (app, ds, _) = app();
    for axis in 0..3 {
        let (status, v) = get(&app, &format!("/slice?axis={axis}&index=2&params=1.5,0.2")).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let shape: Vec<usize> = DIMS.iter().enumerate().filter(|&(a, _)| a != axis).map(|(_, &n)| n).collect();
        assert_eq!(v["shape"], json!(shape));
        let values = floats(&v["values"]);
        assert_eq!(values.len(), shape[0] * shape[1]);

        let (rows, _) = lattice_slice(&DIMS, axis, 2).unwrap();
        let coords: Vec<Vec<f64>> = rows.iter().map(|&i| ds.coord(i).iter().map(|&x| x as f64).collect()).collect();
        let (_, p) = post(&app, "/predict", json!({"coords": coords, "params": [1.5, 0.2]})).await;
        assert_eq!(floats(&p["values"]), values);
    }
    let (_, bin) = get(&app, "/slice?axis=0&index=1&binary=true").await;
    assert_eq!(decode_f32(bin["values"].as_str().unwrap(), "values").unwrap().len(), 7 * 5);
    assert_eq!(bin["params"], json!([2.0, 0.25]));
}

#[tokio::test]
async fn slice_rejects_bad_requests() {
    let (app, _, _) = app();
    let (status, v) = get(&app, "/slice?axis=3&index=0").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "out_of_range", Some("axis"));
    let (status, v) = get(&app, "/slice?axis=1&index=7").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "out_of_range", Some("index"));
    let (status, v) = get(&app, "/slice?axis=x&index=0").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "invalid_query", None);
    let (status, v) = get(&app, "/slice?axis=0&index=0&params=1.5,abc").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "bad_number", Some("params"));
}

#[tokio::test]
async fn expert_map_matches_library() {
    let (app, ds, stats) = app();
    let lib = expert_map(&model().cast::<f32>(), &stats.coords_tensor::<f32>(&ds), false).unwrap();
    for axis in 0..3 {
        let (status, v) = get(&app, &format!("/expert-map?axis={axis}&index=1")).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(v["experts"], 3);
        let (rows, _) = lattice_slice(&DIMS, axis, 1).unwrap();
        let got: Vec<usize> = v["values"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as usize).collect();
        assert!(got.iter().all(|&e| e < 3));
        let expected: Vec<usize> = rows.iter().map(|&i| lib.assignment[i]).collect();
        assert_eq!(got, expected);
    }
    let (status, _) = get(&app, "/expert-map?axis=0&index=99").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn sensitivity_matches_library_sweep() {
    let (app, ds, stats) = app();
    let body = json!({
        "region": {"expert": 0},
        "paramIndex": 1,
        "range": [0.1, 0.4],
        "steps": 5,
        "baseParams": [2.0, 0.25],
    });
    let (status, v) = post(&app, "/sensitivity", body.clone()).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let got: SensitivityResponse = serde_json::from_value(v).unwrap();

    let lib_map = expert_map(&model().cast::<f32>(), &stats.coords_tensor::<f32>(&ds), false).unwrap();
    let rows = lib_map.rows_of(0);
    let coords = region_coords(&stats.coords_tensor::<f64>(&ds), &rows).unwrap();
    let spec = SweepSpec {
        param: 1,
        range: (0.1, 0.4),
        steps: 5,
        base: vec![2.0, 0.25],
    };
    let lib = sensitivity_sweep(&model(), &coords, &stats, &spec).unwrap();
    assert_eq!(got.values, lib.values);
    assert_eq!(got.sensitivity, lib.sensitivity);
    assert_eq!(got.fd_sensitivity, lib.fd_sensitivity);
    assert_eq!(got.region_size, rows.len());
    assert_eq!(got.param_name, "forcing");

    let (_, again) = post(&app, "/sensitivity", body).await;
    assert_eq!(serde_json::from_value::<SensitivityResponse>(again).unwrap(), got);
}

#[tokio::test]
async fn sensitivity_edge_cases() {
    let (app, _, _) = app();
    let (status, v) =
        post(&app, "/sensitivity", json!({"region": "all", "paramIndex": 0, "steps": 1})).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["values"].as_array().unwrap().len(), 1);
    assert_eq!(v["regionSize"], 210);

    let (status, v) =
        post(&app, "/sensitivity", json!({"region": {"mask": []}, "paramIndex": 0, "steps": 3})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "bad_region", Some("region"));

    let (status, v) = post(&app, "/sensitivity", json!({"region": "all", "paramIndex": 0, "steps": 65})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "out_of_range", Some("steps"));

    let (status, v) = post(&app, "/sensitivity", json!({"region": "all", "paramIndex": 2, "steps": 3})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "out_of_range", Some("paramIndex"));

    let (status, v) =
        post(&app, "/sensitivity", json!({"region": "all", "paramIndex": 0, "steps": 3, "range": [0.0, 2.0]})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "out_of_range", Some("range"));

    let (status, v) = post(&app, "/sensitivity", json!({"region": {"expert": 7}, "paramIndex": 0, "steps": 2})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "bad_region", Some("region"));
}

#[tokio::test]
async fn summary_matches_metric_and_analysis_modules() {
    let (app, ds, stats) = app();
    let (status, v) = get(&app, "/experts/summary").await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let s: ExpertSummary = serde_json::from_value(v).unwrap();
    assert_eq!(s.experts.len(), 3);
    assert_eq!(s.frequency_source, FrequencySource::GroundTruth);
    assert_eq!(s.experts.iter().map(|r| r.count).sum::<usize>(), ds.len());

    let coords = stats.coords_tensor::<f32>(&ds);
    let map = expert_map(&model().cast::<f32>(), &coords, false).unwrap();
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    for m in &ds.members {
        gt.extend(m.values.iter().map(|&v| v as f64));
        pred.extend(library_values(&stats, &coords, &m.params));
    }
    let table = per_expert_psnr(&map.assignment, 3, &gt, &pred, stats.field_span()).unwrap();
    let graph = Adjacency::lattice(&DIMS);
    for (row, t) in s.experts.iter().zip(&table) {
        assert_eq!(row.count, t.count);
        match (row.psnr, t.psnr) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
            (a, b) => assert_eq!(a, b),
        }
        let mut freqs = Vec::new();
        for m in &ds.members {
            let vals: Vec<f64> = m.values.iter().map(|&v| v as f64).collect();
            freqs.push(per_expert_frequency(&graph, &map.assignment, 3, &vals).unwrap().per_expert[row.expert]);
        }
        let expect = freqs.iter().flatten().sum::<f64>() / freqs.iter().flatten().count().max(1) as f64;
        match row.frequency {
            Some(f) => assert!((f - expect).abs() < 1e-12),
            None => assert!(freqs.iter().all(Option::is_none)),
        }
    }
}

#[tokio::test]
async fn summary_without_ground_truth_falls_back_to_predictions() {
    let ds = dataset();
    let stats = NormalizationStats::fit(&ds, None).unwrap();
    let bare = ds.select_members(&[]);
    let app = router(Arc::new(session_with(bare, stats, ServiceOptions::default())));
    let (_, info) = get(&app, "/info").await;
    assert_eq!(info["groundTruth"], false);
    let (status, v) = get(&app, "/experts/summary").await;
    assert_eq!(status, StatusCode::OK);
    let s: ExpertSummary = serde_json::from_value(v).unwrap();
    assert_eq!(s.frequency_source, FrequencySource::Prediction);
    assert!(s.experts.iter().all(|r| r.psnr.is_none()));
    assert_eq!(s.global_psnr, None);
    assert!(s.global_frequency >= 0.0);
}

#[tokio::test]
async fn cors_and_malformed_bodies() {
    let ds = dataset();
    let stats = NormalizationStats::fit(&ds, None).unwrap();
    let options = ServiceOptions {
        allowed_origins: vec!["http://localhost:5173".into()],
        max_sweep_steps: 8,
        ..Default::default()
    };
    let app = router(Arc::new(session_with(ds, stats, options)));
    let req = Request::get("/info")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "http://localhost:5173");

    let req = Request::post("/predict")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let (status, v) = call(&app, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&v, "invalid_body", None);

    let (status, v) = post(&app, "/sensitivity", json!({"region": "all", "paramIndex": 0, "steps": 9})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&v, "out_of_range", Some("steps"));
}

#[test]
fn session_rejects_mismatched_dataset() {
    let ds = dataset();
    let stats = NormalizationStats::fit(&ds, None).unwrap();
    let cfg = ModelConfig {
        param_dim: 3,
        ..config()
    };
    let err = Session::new(FaInrModel::new(cfg).unwrap(), stats, ds, ServiceOptions::default()).err();
    assert!(matches!(err, Some(SessionError::Mismatch(_))));
}

//! Request and response bodies. Field names are camelCase on the wire.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use fainr_core::analysis::Region;
use fainr_core::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// Little-endian `f32` array as base64.
pub fn encode_f32(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str, field: &str) -> Result<Vec<f32>, ApiError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| ApiError::invalid("bad_base64", format!("{field} is not valid base64: {e}"), field))?;
    if bytes.len() % 4 != 0 {
        return Err(ApiError::invalid(
            "bad_base64",
            format!("{field} holds {} bytes, not a whole number of f32 values", bytes.len()),
            field,
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Either JSON numbers or, on the bulk path, a base64 string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    Numbers(Vec<f64>),
    Packed(String),
}

impl Values {
    pub fn pack(values: Vec<f64>, binary: bool) -> Self {
        if binary {
            let v: Vec<f32> = values.iter().map(|&x| x as f32).collect();
            Values::Packed(encode_f32(&v))
        } else {
            Values::Numbers(values)
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct BinaryFlag {
    #[serde(default)]
    pub binary: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Info {
    pub model: ModelConfig,
    pub experts: usize,
    pub coord_dim: usize,
    pub param_dim: usize,
    pub param_names: Vec<String>,
    /// Trained parameter ranges; requests outside them are rejected.
    pub param_ranges: Vec<[f64; 2]>,
    pub coord_ranges: Vec<[f64; 2]>,
    pub field_range: [f64; 2],
    pub lattice: Option<Vec<usize>>,
    pub coordinate_count: usize,
    pub members: usize,
    pub ground_truth: bool,
    pub max_sweep_steps: usize,
}

/// Coordinates as rows of physical values or a packed `N×d` base64 array.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coords {
    Rows(Vec<Vec<f64>>),
    Packed(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictRequest {
    pub coords: Coords,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictResponse {
    pub count: usize,
    pub values: Values,
}

#[derive(Clone, Debug, Deserialize)]
pub struct SliceQuery {
    pub axis: usize,
    pub index: usize,
    /// Comma-separated physical parameters; range midpoints when absent.
    pub params: Option<String>,
    #[serde(default)]
    pub binary: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SliceResponse {
    pub axis: usize,
    pub index: usize,
    /// `[rows, cols]` of the slice; values are row-major.
    pub shape: [usize; 2],
    pub params: Vec<f64>,
    pub values: Values,
    pub field_range: [f64; 2],
}

#[derive(Clone, Debug, Deserialize)]
pub struct MapQuery {
    pub axis: usize,
    pub index: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpertMapResponse {
    pub axis: usize,
    pub index: usize,
    pub shape: [usize; 2],
    pub experts: usize,
    pub values: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SensitivityRequest {
    /// `"all"`, `{"expert": e}` or `{"mask": [row, ...]}`.
    pub region: Region,
    pub param_index: usize,
    /// Full trained range when absent.
    pub range: Option<[f64; 2]>,
    pub steps: usize,
    /// Range midpoints when absent.
    pub base_params: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SensitivityResponse {
    pub param_index: usize,
    pub param_name: String,
    pub region: Region,
    pub region_size: usize,
    pub values: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub fd_sensitivity: Vec<f64>,
    pub max_rel_discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertRow {
    pub expert: usize,
    pub count: usize,
    pub psnr: Option<f64>,
    pub frequency: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencySource {
    GroundTruth,
    /// No ground truth loaded: energies of the prediction at mid-range parameters.
    Prediction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExpertSummary {
    pub experts: Vec<ExpertRow>,
    pub global_psnr: Option<f64>,
    pub global_frequency: f64,
    pub frequency_source: FrequencySource,
    pub members: usize,
}

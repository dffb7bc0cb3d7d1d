//! Layered run configuration: built-in defaults, then an optional JSON
//! config file, then command-line flags.

use std::path::Path;

use fainr_core::model::ModelConfig;
use fainr_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Member indices used for fitting; all members when `None`.
    pub train_members: Option<Vec<usize>>,
    /// Members scored for validation PSNR during training.
    pub validation_members: Option<Vec<usize>>,
    /// Fraction of coordinates kept for training (spatial holdout).
    pub coord_split: Option<f64>,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_members: None,
            validation_members: None,
            coord_split: None,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

/// Rejects keys of `overlay` that `base` does not have, naming the full path.
fn check_keys(base: &Value, overlay: &Value, path: &str) -> CliResult<()> {
    if let (Value::Object(b), Value::Object(o)) = (base, overlay) {
        for (k, v) in o {
            let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            match b.get(k) {
                None => return Err(CliError::Usage(format!("unknown config key `{here}`"))),
                Some(inner) => check_keys(inner, v, &here)?,
            }
        }
    }
    Ok(())
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Flag overrides as `("section.key", value)` pairs; `None` values are skipped.
pub type Overrides = Vec<(&'static str, Option<Value>)>;

pub fn resolve(file: Option<&Path>, overrides: Overrides) -> CliResult<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        let overlay: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config file {} is not valid JSON: {e}", path.display())))?;
        if !overlay.is_object() {
            return Err(CliError::Usage("config file must hold a JSON object".into()));
        }
        check_keys(&value, &overlay, "")?;
        merge(&mut value, overlay);
    }
    for (key, v) in overrides {
        let Some(v) = v else { continue };
        let mut patch = v;
        for part in key.rsplit('.') {
            let mut m = Map::new();
            m.insert(part.to_string(), patch);
            patch = Value::Object(m);
        }
        merge(&mut value, patch);
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

/// A comma-separated flag value kept as one argument.
#[derive(Clone, Debug, PartialEq)]
pub struct List<T>(pub Vec<T>);

pub fn index_list(text: &str) -> Result<List<usize>, String> {
    parse_indices(text).map(List)
}

pub fn float_list(text: &str) -> Result<List<f64>, String> {
    parse_floats(text).map(List)
}

/// Parses `0-4,7,9` into indices.
pub fn parse_indices(text: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| format!("bad index range `{part}`"))?;
                let b: usize = b.trim().parse().map_err(|_| format!("bad index range `{part}`"))?;
                if b < a {
                    return Err(format!("descending range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| format!("bad index `{part}`"))?),
        }
    }
    if out.is_empty() {
        return Err("empty index list".into());
    }
    Ok(out)
}

/// Parses `a,b,...` into floats.
pub fn parse_floats(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("bad number `{s}`")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"model": {"experts": 6}, "train": {"steps": 50, "learning_rate": 0.01}}"#).unwrap();
        let cfg = resolve(
            Some(&path),
            vec![("train.steps", Some(json!(7))), ("model.top_k", None)],
        )
        .unwrap();
        assert_eq!(cfg.model.experts, 6);
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.model.top_k, ModelConfig::default().top_k);
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"model": {"expertz": 6}}"#).unwrap();
        let err = resolve(Some(&path), vec![]).unwrap_err();
        assert!(err.to_string().contains("model.expertz"));
    }

    #[test]
    fn index_lists() {
        assert_eq!(parse_indices("0-3,7").unwrap(), vec![0, 1, 2, 3, 7]);
        assert!(parse_indices("3-1").is_err());
        assert!(parse_indices("x").is_err());
        assert_eq!(parse_floats("1.5, 0.25").unwrap(), vec![1.5, 0.25]);
    }
}

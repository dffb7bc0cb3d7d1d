//! On-disk ensemble layout: `manifest.json` plus raw little-endian `f32`
//! arrays (`coords.f32`, one `member_<id>.f32` per member).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

use super::{EnsembleDataset, Member};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const COORDS_FILE: &str = "coords.f32";
const FORMAT_NAME: &str = "fainr-ensemble";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestMember {
    pub id: String,
    pub params: Vec<f64>,
    pub file: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub endianness: String,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub coords_file: String,
    pub coord_ranges: Vec<[f64; 2]>,
    pub param_ranges: Vec<[f64; 2]>,
    pub field_range: [f64; 2],
    #[serde(default)]
    pub lattice: Option<Vec<usize>>,
    #[serde(default)]
    pub param_names: Vec<String>,
    pub members: Vec<ManifestMember>,
}

/// Per-axis coordinate ranges, per-axis parameter ranges, global field range.
pub(crate) fn raw_ranges(ds: &EnsembleDataset) -> (Vec<[f64; 2]>, Vec<[f64; 2]>, [f64; 2]) {
    let mut coord = vec![[f64::INFINITY, f64::NEG_INFINITY]; ds.coord_dim];
    for row in ds.coords.chunks(ds.coord_dim) {
        for (r, &v) in coord.iter_mut().zip(row) {
            r[0] = r[0].min(v as f64);
            r[1] = r[1].max(v as f64);
        }
    }
    let mut param = vec![[f64::INFINITY, f64::NEG_INFINITY]; ds.param_dim];
    let mut field = [f64::INFINITY, f64::NEG_INFINITY];
    for m in &ds.members {
        for (r, &v) in param.iter_mut().zip(&m.params) {
            r[0] = r[0].min(v);
            r[1] = r[1].max(v);
        }
        for &v in &m.values {
            field[0] = field[0].min(v as f64);
            field[1] = field[1].max(v as f64);
        }
    }
    (coord, param, field)
}

fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Data(format!(
            "{} has {} bytes, not a whole number of f32 values",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn manifest_of(ds: &EnsembleDataset) -> Manifest {
    let (coord_ranges, param_ranges, field_range) = raw_ranges(ds);
    Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        endianness: "little".into(),
        d: ds.coord_dim,
        m: ds.param_dim,
        n: ds.len(),
        coords_file: COORDS_FILE.into(),
        coord_ranges,
        param_ranges,
        field_range,
        lattice: ds.lattice.clone(),
        param_names: ds.param_names.clone(),
        members: ds
            .members
            .iter()
            .map(|m| ManifestMember {
                id: m.id.clone(),
                params: m.params.clone(),
                file: format!("member_{}.f32", m.id),
            })
            .collect(),
    }
}

pub fn save(ds: &EnsembleDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let manifest = manifest_of(ds);
    write_f32(&dir.join(COORDS_FILE), &ds.coords)?;
    for (m, entry) in ds.members.iter().zip(&manifest.members) {
        write_f32(&dir.join(&entry.file), &m.values)?;
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("corrupt manifest header: {e}")))?;
    if manifest.format != FORMAT_NAME {
        return Err(Error::Data(format!("unknown format `{}`", manifest.format)));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported manifest version {}", manifest.version)));
    }
    if manifest.endianness != "little" {
        return Err(Error::Data(format!(
            "endianness `{}` not supported; arrays must be little-endian",
            manifest.endianness
        )));
    }
    Ok(manifest)
}

fn ranges_match(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(x[0], y[0]) && close(x[1], y[1]))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

pub fn load(dir: &Path) -> Result<EnsembleDataset> {
    let manifest = read_manifest(dir)?;
    let coords = read_f32(&dir.join(&manifest.coords_file))?;
    if coords.len() != manifest.n * manifest.d {
        return Err(Error::Data(format!(
            "{} holds {} values, manifest expects N·d = {}",
            manifest.coords_file,
            coords.len(),
            manifest.n * manifest.d
        )));
    }
    let mut members = Vec::with_capacity(manifest.members.len());
    for entry in &manifest.members {
        let path = dir.join(&entry.file);
        if !path.exists() {
            return Err(Error::Data(format!("member {} file {} is missing", entry.id, entry.file)));
        }
        let values = read_f32(&path)?;
        if values.len() != manifest.n {
            return Err(Error::Data(format!(
                "member {} has {} values, manifest N = {}",
                entry.id,
                values.len(),
                manifest.n
            )));
        }
        members.push(Member {
            id: entry.id.clone(),
            params: entry.params.clone(),
            values,
        });
    }
    let mut ds = EnsembleDataset::new(manifest.d, manifest.m, coords, members, manifest.lattice.clone())?;
    if !manifest.param_names.is_empty() {
        ds.param_names = manifest.param_names.clone();
        ds.validate()?;
    }
    let (coord, param, field) = raw_ranges(&ds);
    if !ranges_match(&coord, &manifest.coord_ranges) {
        return Err(Error::Data("coordinate ranges disagree with manifest".into()));
    }
    if !ds.members.is_empty() {
        if !ranges_match(&param, &manifest.param_ranges) {
            return Err(Error::Data("parameter ranges disagree with manifest".into()));
        }
        if !ranges_match(&[field], &[manifest.field_range]) {
            return Err(Error::Data("field range disagrees with manifest".into()));
        }
    }
    Ok(ds)
}

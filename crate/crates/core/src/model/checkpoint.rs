//! Binary checkpoint format.
//!
//! ```text
//! "FAINR1"
//! u32 LE  header length, then that many bytes of UTF-8 JSON header
//! repeated until EOF:
//!   u32 LE name length, name bytes (UTF-8)
//!   u32 LE rank, rank × u32 LE extents
//!   product(extents) × f32 LE values
//! ```
//! Model tensors come first in parameter-set order. Training checkpoints
//! append optimizer moments named `adam.m/<param>` and `adam.v/<param>`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::AdamState;

use super::{FaInrModel, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"FAINR1";
const FORMAT_VERSION: u32 = 1;
const FIRST_MOMENT: &str = "adam.m/";
const SECOND_MOMENT: &str = "adam.v/";

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    /// Optimizer step at save time (0 when no optimizer state is stored).
    step: usize,
}

fn ck(field: &str, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        field: field.to_string(),
        message: message.into(),
    }
}

fn write_tensor<W: Write, T: Scalar>(w: &mut W, name: &str, t: &Tensor<T>) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(model: &FaInrModel<T>, path: &Path) -> Result<()> {
    save_checkpoint_with_state(model, None, path)
}

pub fn save_checkpoint_with_state<T: Scalar>(
    model: &FaInrModel<T>,
    state: Option<&AdamState<T>>,
    path: &Path,
) -> Result<()> {
    let header = Header {
        version: FORMAT_VERSION,
        model: model.config().clone(),
        step: state.map_or(0, |s| s.step),
    };
    let doc = serde_json::to_vec(&header)?;
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| io_err(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&(doc.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&doc).map_err(io)?;
    for (name, t) in model.params().iter() {
        write_tensor(&mut w, name, t).map_err(io)?;
    }
    if let Some(s) = state {
        for (prefix, moments) in [(FIRST_MOMENT, &s.first), (SECOND_MOMENT, &s.second)] {
            for ((name, _), t) in model.params().iter().zip(moments.iter()) {
                write_tensor(&mut w, &format!("{prefix}{name}"), t).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ck(field, "unexpected end of file (truncated checkpoint)"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

type Contents<T> = (Header, Vec<(String, Tensor<T>)>);

fn read_contents<T: Scalar>(path: &Path) -> Result<Contents<T>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(ck("magic", "not an FAINR1 checkpoint"));
    }
    let len = r.u32("header")? as usize;
    let doc = r.take(len, "header")?;
    let header: Header = serde_json::from_slice(doc).map_err(|e| ck("header", e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(ck(
            "version",
            format!("unsupported version {} (expected {FORMAT_VERSION})", header.version),
        ));
    }
    let mut tensors = Vec::new();
    while !r.done() {
        let n = r.u32("tensor name")? as usize;
        let name = std::str::from_utf8(r.take(n, "tensor name")?)
            .map_err(|_| ck("tensor name", "invalid UTF-8"))?
            .to_string();
        let rank = r.u32(&name)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&name)? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = r.take(count * 4, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| T::from_f64_lossy(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok((header, tensors))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<FaInrModel<T>> {
    Ok(load_checkpoint_with_state(path)?.0)
}

/// Loads the tensors of `path` into a model built from `expected` instead of
/// the embedded config; any tensor whose shape differs is reported by name.
pub fn load_checkpoint_as<T: Scalar>(path: &Path, expected: &ModelConfig) -> Result<FaInrModel<T>> {
    let (_, tensors) = read_contents::<T>(path)?;
    let tensors = tensors
        .into_iter()
        .filter(|(n, _)| !n.starts_with(FIRST_MOMENT) && !n.starts_with(SECOND_MOMENT))
        .collect();
    FaInrModel::from_tensors(expected.clone(), tensors)
}

/// Loads the model and, when present, the optimizer state saved with it.
pub fn load_checkpoint_with_state<T: Scalar>(path: &Path) -> Result<(FaInrModel<T>, Option<AdamState<T>>)> {
    let (header, tensors) = read_contents::<T>(path)?;
    let mut model_tensors = Vec::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (name, t) in tensors {
        if let Some(rest) = name.strip_prefix(FIRST_MOMENT) {
            first.push((rest.to_string(), t));
        } else if let Some(rest) = name.strip_prefix(SECOND_MOMENT) {
            second.push((rest.to_string(), t));
        } else {
            model_tensors.push((name, t));
        }
    }
    let model = FaInrModel::from_tensors(header.model, model_tensors)?;
    if first.is_empty() && second.is_empty() {
        return Ok((model, None));
    }
    let order = |list: Vec<(String, Tensor<T>)>, prefix: &str| -> Result<Vec<Tensor<T>>> {
        let mut slots: Vec<Option<Tensor<T>>> = vec![None; model.params().len()];
        for (name, t) in list {
            let id = model
                .params()
                .id(&name)
                .ok_or_else(|| ck(&format!("{prefix}{name}"), "unknown parameter"))?;
            if t.shape() != model.params().get(id).shape() {
                return Err(ck(&format!("{prefix}{name}"), "moment shape mismatch"));
            }
            slots[id.index()] = Some(t);
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| {
                    let name = model.params().ids().nth(i).map(|id| model.params().name(id)).unwrap_or("?");
                    ck(&format!("{prefix}{name}"), "missing moment")
                })
            })
            .collect()
    };
    let state = AdamState {
        step: header.step,
        first: order(first, FIRST_MOMENT)?,
        second: order(second, SECOND_MOMENT)?,
    };
    Ok((model, Some(state)))
}

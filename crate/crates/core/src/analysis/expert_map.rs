use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::{top1, FaInrModel};
use crate::par;
use crate::scalar::Scalar;
use crate::surrogate::PREDICT_CHUNK;
use crate::tensor::Tensor;

/// Top-1 expert of every coordinate, optionally with the full gate vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertMap {
    pub experts: usize,
    pub assignment: Vec<usize>,
    #[serde(default)]
    pub probs: Option<Vec<Vec<f64>>>,
}

impl ExpertMap {
    /// Number of coordinates owned by each expert.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.experts];
        for &e in &self.assignment {
            c[e] += 1;
        }
        c
    }

    /// Coordinate rows owned by `expert`.
    pub fn rows_of(&self, expert: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(_, &e)| e == expert)
            .map(|(i, _)| i)
            .collect()
    }

    /// One byte per coordinate, for raw volume viewers.
    pub fn to_u8(&self) -> Result<Vec<u8>> {
        if self.experts > 256 {
            return Err(contract("u8 dump holds at most 256 experts"));
        }
        Ok(self.assignment.iter().map(|&e| e as u8).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,expert\n");
        for (i, e) in self.assignment.iter().enumerate() {
            let _ = writeln!(s, "{i},{e}");
        }
        s
    }
}

/// Top-1 gate assignment of normalized `coords` (ties to the lower index).
/// Gating reads coordinates only, so no parameter vector is involved.
pub fn expert_map<T: Scalar>(model: &FaInrModel<T>, coords: &Tensor<T>, keep_probs: bool) -> Result<ExpertMap> {
    let n = coords.rows();
    let d = coords.cols();
    let chunks = n.div_ceil(PREDICT_CHUNK);
    let parts = par::map_range(chunks, |ci| -> Result<Tensor<T>> {
        let lo = ci * PREDICT_CHUNK;
        let hi = (lo + PREDICT_CHUNK).min(n);
        let sub = Tensor::matrix(hi - lo, d, coords.data()[lo * d..hi * d].to_vec())?;
        model.gate_batch(&sub)
    });
    let mut assignment = Vec::with_capacity(n);
    let mut probs = keep_probs.then(Vec::new);
    for part in parts {
        let t = part?;
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            assignment.push(top1(row));
            if let Some(p) = probs.as_mut() {
                p.push(row.iter().map(|v| v.to_f64_lossy()).collect());
            }
        }
    }
    Ok(ExpertMap {
        experts: model.config().experts,
        assignment,
        probs,
    })
}

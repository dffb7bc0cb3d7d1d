use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{EnsembleDataset, NormalizationStats};
use crate::error::{contract, Result};
use crate::surrogate::{predict, Surrogate};

use super::fidelity::{max_diff, psnr, psnr_from_mse};
use super::ssim::ssim_volume;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberMetrics {
    pub id: String,
    pub params: Vec<f64>,
    /// `None` stands for an exact reconstruction (infinite PSNR).
    pub psnr: Option<f64>,
    pub md: f64,
    /// Only available for full lattices with every extent of at least 11.
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertScore {
    pub expert: usize,
    /// Coordinates whose top-1 expert is this one.
    pub count: usize,
    /// `None` when the expert owns no coordinate.
    pub psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub members: Vec<MemberMetrics>,
    pub mean_psnr: f64,
    pub mean_md: f64,
    pub mean_ssim: Option<f64>,
    #[serde(default)]
    pub per_expert: Option<Vec<ExpertScore>>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl MetricReport {
    /// One row per member plus a trailing `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("member,psnr_db,md,ssim\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for m in &self.members {
            let p = m.psnr.map_or("inf".to_string(), |x| format!("{x:.6}"));
            let _ = writeln!(s, "{},{},{:.6e},{}", m.id, p, m.md, opt(m.ssim));
        }
        let _ = writeln!(s, "mean,{:.6},{:.6e},{}", self.mean_psnr, self.mean_md, opt(self.mean_ssim));
        s
    }

    pub fn per_expert_csv(&self) -> Option<String> {
        let rows = self.per_expert.as_ref()?;
        let mut s = String::from("expert,count,psnr_db\n");
        for r in rows {
            let p = r.psnr.map_or(String::new(), |x| format!("{x:.6}"));
            let _ = writeln!(s, "{},{},{}", r.expert, r.count, p);
        }
        Some(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// PSNR restricted to each expert's coordinates. `assignment[i]` is the top-1
/// expert of coordinate `i`; `gt` and `pred` hold one or more members laid
/// out back to back over the same coordinates, and errors are pooled.
pub fn per_expert_psnr(
    assignment: &[usize],
    experts: usize,
    gt: &[f64],
    pred: &[f64],
    range: f64,
) -> Result<Vec<ExpertScore>> {
    let n = assignment.len();
    if n == 0 || gt.len() != pred.len() || gt.len() % n != 0 {
        return Err(contract("per-expert PSNR needs whole members over the assigned coordinates"));
    }
    if !(range > 0.0) {
        return Err(contract("PSNR range must be positive"));
    }
    let mut sq = vec![0.0; experts];
    let mut hits = vec![0usize; experts];
    let mut count = vec![0usize; experts];
    for &e in assignment {
        if e >= experts {
            return Err(contract(format!("expert index {e} out of range for {experts} experts")));
        }
        count[e] += 1;
    }
    for (k, (a, b)) in gt.iter().zip(pred).enumerate() {
        let e = assignment[k % n];
        sq[e] += (a - b) * (a - b);
        hits[e] += 1;
    }
    Ok((0..experts)
        .map(|e| ExpertScore {
            expert: e,
            count: count[e],
            psnr: (hits[e] > 0).then(|| psnr_from_mse(sq[e] / hits[e] as f64, range)),
        })
        .collect())
}

/// Scores `model` on the given members of `ds` in raw units. PSNR and MD use
/// the ground-truth range in `stats`; SSIM is computed only when every
/// lattice point is evaluated. `coords` restricts scoring to a subset of
/// coordinate rows; `experts` adds a per-expert table from a top-1 assignment
/// over all coordinates.
pub fn evaluate<S: Surrogate<f32> + ?Sized>(
    model: &S,
    ds: &EnsembleDataset,
    stats: &NormalizationStats,
    members: &[usize],
    coords: Option<&[usize]>,
    experts: Option<(&[usize], usize)>,
) -> Result<MetricReport> {
    if members.is_empty() {
        return Err(contract("evaluation needs at least one member"));
    }
    let all = stats.coords_tensor::<f32>(ds);
    let rows: Vec<usize> = coords.map_or_else(|| (0..ds.len()).collect(), <[usize]>::to_vec);
    let sub = if coords.is_some() {
        let d = ds.coord_dim;
        let mut data = Vec::with_capacity(rows.len() * d);
        for &i in &rows {
            data.extend_from_slice(all.row_slice(i));
        }
        crate::tensor::Tensor::matrix(rows.len(), d, data)?
    } else {
        all
    };
    let range = stats.field_span();
    // SSIM only on full lattices whose slices fit the 11×11 window.
    let lattice = match (&ds.lattice, coords) {
        (Some(dims), None) if matches!(dims.len(), 2 | 3) && dims.iter().all(|&n| n >= 11) => Some(dims.clone()),
        _ => None,
    };
    let mut out = Vec::with_capacity(members.len());
    let mut pooled_gt = Vec::new();
    let mut pooled_pred = Vec::new();
    for &j in members {
        let m = &ds.members[j];
        let p = stats.params_unit::<f32>(&m.params);
        let unit = predict(model, &sub, &p)?;
        let pred: Vec<f64> = unit.iter().map(|&u| stats.field_from_unit(u as f64)).collect();
        let gt: Vec<f64> = rows.iter().map(|&i| m.values[i] as f64).collect();
        let ssim = match &lattice {
            Some(dims) => Some(ssim_volume(&gt, &pred, dims, stats.field_range)?),
            None => None,
        };
        out.push(MemberMetrics {
            id: m.id.clone(),
            params: m.params.clone(),
            psnr: finite(psnr(&gt, &pred, range)?),
            md: if rows.len() > 1 { max_diff(&gt, &pred).unwrap_or(0.0) } else { 0.0 },
            ssim,
        });
        if experts.is_some() {
            pooled_gt.extend(gt);
            pooled_pred.extend(pred);
        }
    }
    let k = out.len() as f64;
    let mean_psnr = out.iter().map(|m| m.psnr.unwrap_or(f64::INFINITY)).sum::<f64>() / k;
    let mean_md = out.iter().map(|m| m.md).sum::<f64>() / k;
    let mean_ssim = lattice.map(|_| out.iter().filter_map(|m| m.ssim).sum::<f64>() / k);
    let per_expert = match experts {
        Some((assign, e)) => {
            let sub_assign: Vec<usize> = rows.iter().map(|&i| assign[i]).collect();
            Some(per_expert_psnr(&sub_assign, e, &pooled_gt, &pooled_pred, range)?)
        }
        None => None,
    };
    Ok(MetricReport {
        members: out,
        mean_psnr,
        mean_md,
        mean_ssim,
        per_expert,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_expert_matches_global() {
        let gt = [0.0, 0.5, 1.0, 0.25];
        let pred = [0.1, 0.5, 0.9, 0.25];
        let t = per_expert_psnr(&[0; 4], 1, &gt, &pred, 1.0).unwrap();
        assert!((t[0].psnr.unwrap() - psnr(&gt, &pred, 1.0).unwrap()).abs() < 1e-12);
        assert_eq!(t[0].count, 4);
    }

    #[test]
    fn empty_expert_is_marked() {
        let t = per_expert_psnr(&[0, 0], 2, &[0.0, 1.0], &[0.0, 0.9], 1.0).unwrap();
        assert_eq!(t[1].psnr, None);
        assert_eq!(t[1].count, 0);
    }
}

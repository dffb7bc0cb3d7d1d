use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::NormalizationStats;
use crate::error::{contract, Result};
use crate::par;
use crate::scalar::{c, Scalar};
use crate::surrogate::{Surrogate, PREDICT_CHUNK};
use crate::tensor::Tensor;

use super::ExpertMap;

/// Coordinates a sensitivity curve is averaged over.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// The top-1 coordinate set of one expert.
    Expert(usize),
    /// Explicit coordinate rows.
    Mask(Vec<usize>),
    All,
}

impl Region {
    /// Coordinate rows of the region; `map` is needed for `Expert`.
    pub fn rows(&self, n: usize, map: Option<&ExpertMap>) -> Result<Vec<usize>> {
        let rows = match self {
            Region::All => (0..n).collect(),
            Region::Mask(rows) => {
                if let Some(&bad) = rows.iter().find(|&&i| i >= n) {
                    return Err(contract(format!("mask row {bad} outside {n} coordinates")));
                }
                rows.clone()
            }
            Region::Expert(e) => {
                let map = map.ok_or_else(|| contract("expert regions need an expert map"))?;
                if *e >= map.experts {
                    return Err(contract(format!("expert {e} out of range (E = {})", map.experts)));
                }
                map.rows_of(*e)
            }
        };
        if rows.is_empty() {
            return Err(contract("sensitivity region is empty"));
        }
        Ok(rows)
    }
}

/// A one-parameter sweep in physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: usize,
    /// Inclusive sweep interval in physical units.
    pub range: (f64, f64),
    pub steps: usize,
    /// Physical values of all parameters; slot `param` is overwritten by the sweep.
    pub base: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub param: usize,
    pub values: Vec<f64>,
    /// Tape derivative `|∂/∂p_s mean_R |ŷ||` in physical units.
    pub sensitivity: Vec<f64>,
    /// The same quantity by central differences.
    pub fd_sensitivity: Vec<f64>,
    /// Largest relative gap between the two estimates over the sweep.
    pub max_rel_discrepancy: f64,
    pub region_size: usize,
}

impl SensitivityCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("value,sensitivity,fd_sensitivity\n");
        for ((v, a), f) in self.values.iter().zip(&self.sensitivity).zip(&self.fd_sensitivity) {
            let _ = writeln!(s, "{v:.9e},{a:.9e},{f:.9e}");
        }
        s
    }
}

/// Relative step of the central-difference cross-check, in normalized parameter units.
pub const FD_STEP: f64 = 1e-3;

fn sweep_points(range: (f64, f64), steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![range.0];
    }
    (0..steps)
        .map(|k| range.0 + (range.1 - range.0) * k as f64 / (steps - 1) as f64)
        .collect()
}

/// `mean_R |ŷ|` in physical units and its gradient with respect to the
/// normalized parameter vector.
fn objective<T: Scalar, S: Surrogate<T> + ?Sized>(
    model: &S,
    coords: &Tensor<T>,
    stats: &NormalizationStats,
    p: &[T],
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let n = coords.rows();
    let d = coords.cols();
    let span = stats.field_span();
    let low = stats.field_range[0];
    let chunks = n.div_ceil(PREDICT_CHUNK);
    let parts = par::map_range(chunks, |ci| -> Result<(f64, Vec<f64>)> {
        let lo = ci * PREDICT_CHUNK;
        let hi = (lo + PREDICT_CHUNK).min(n);
        let sub = Tensor::matrix(hi - lo, d, coords.data()[lo * d..hi * d].to_vec())?;
        let mut g = Graph::new();
        let pv = if with_grad {
            g.input(Tensor::row(p.to_vec()))
        } else {
            g.constant(Tensor::row(p.to_vec()))
        };
        let unit = model.build(&mut g, &sub, pv)?;
        let raw = g.scale(unit, c(span));
        let raw = g.add_scalar(raw, c(low));
        let mag = g.abs(raw);
        let total = g.sum(mag);
        let part = g.scale(total, c(1.0 / n as f64));
        let value = g.value(part).data()[0].to_f64_lossy();
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let grads = g.backward(part)?;
        let gp = grads
            .get(pv)
            .map(|t| t.data().iter().map(|v| v.to_f64_lossy()).collect())
            .unwrap_or_else(|| vec![0.0; p.len()]);
        Ok((value, gp))
    });
    let mut value = 0.0;
    let mut grad = vec![0.0; p.len()];
    for part in parts {
        let (v, g) = part?;
        value += v;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((value, grad))
}

/// Sensitivity of the region-averaged magnitude `mean_R |ŷ(x, p)|` to
/// parameter `spec.param` at each sweep point. `coords` are the normalized
/// region coordinates. The tape derivative is taken with respect to the
/// normalized parameter and divided by the parameter's physical span; a
/// central difference with step [`FD_STEP`] is computed alongside.
pub fn sensitivity_sweep<T: Scalar, S: Surrogate<T> + ?Sized>(
    model: &S,
    coords: &Tensor<T>,
    stats: &NormalizationStats,
    spec: &SweepSpec,
) -> Result<SensitivityCurve> {
    let m = model.param_dim();
    if spec.param >= m {
        return Err(contract(format!("parameter index {} out of range (m = {m})", spec.param)));
    }
    if spec.base.len() != m {
        return Err(contract(format!("expected {m} base parameters, got {}", spec.base.len())));
    }
    if coords.rows() == 0 {
        return Err(contract("sensitivity region is empty"));
    }
    if spec.steps == 0 {
        return Err(contract("a sweep needs at least one step"));
    }
    if spec.steps > 1 && !(spec.range.1 > spec.range.0) {
        return Err(contract("sweep range must be increasing"));
    }
    let r = stats.param_ranges[spec.param];
    let tol = 1e-9 * (1.0 + r[0].abs().max(r[1].abs()));
    if spec.range.0 < r[0] - tol || spec.range.1 > r[1] + tol {
        return Err(contract(format!(
            "sweep range [{}, {}] leaves the trained range [{}, {}] of parameter {}",
            spec.range.0, spec.range.1, r[0], r[1], spec.param
        )));
    }
    let span = stats.param_span(spec.param);
    let values = sweep_points(spec.range, spec.steps);
    let points = par::map(&values, |&v| -> Result<(f64, f64)> {
        let mut unit: Vec<f64> = spec.base.iter().enumerate().map(|(s, &x)| stats.param_to_unit(s, x)).collect();
        unit[spec.param] = stats.param_to_unit(spec.param, v);
        let at = |u: &[f64]| -> Vec<T> { u.iter().map(|&x| c(x)).collect() };
        let (_, grad) = objective(model, coords, stats, &at(&unit), true)?;
        let centre = unit[spec.param];
        unit[spec.param] = centre + FD_STEP;
        let (up, _) = objective(model, coords, stats, &at(&unit), false)?;
        unit[spec.param] = centre - FD_STEP;
        let (down, _) = objective(model, coords, stats, &at(&unit), false)?;
        let fd = (up - down) / (2.0 * FD_STEP) / span;
        Ok(((grad[spec.param] / span).abs(), fd.abs()))
    });
    let mut sensitivity = Vec::with_capacity(values.len());
    let mut fd_sensitivity = Vec::with_capacity(values.len());
    let mut worst: f64 = 0.0;
    for p in points {
        let (a, f) = p?;
        let denom = a.max(f).max(1e-12);
        worst = worst.max((a - f).abs() / denom);
        sensitivity.push(a);
        fd_sensitivity.push(f);
    }
    Ok(SensitivityCurve {
        param: spec.param,
        values,
        sensitivity,
        fd_sensitivity,
        max_rel_discrepancy: worst,
        region_size: coords.rows(),
    })
}

/// One full-range curve per parameter over all of `coords`, other
/// parameters held at their range midpoints.
pub fn global_sensitivity<T: Scalar, S: Surrogate<T> + ?Sized>(
    model: &S,
    coords: &Tensor<T>,
    stats: &NormalizationStats,
    steps: usize,
) -> Result<Vec<SensitivityCurve>> {
    let base: Vec<f64> = stats.param_ranges.iter().map(|r| 0.5 * (r[0] + r[1])).collect();
    (0..model.param_dim())
        .map(|s| {
            let r = stats.param_ranges[s];
            let spec = SweepSpec {
                param: s,
                range: (r[0], r[1]),
                steps,
                base: base.clone(),
            };
            sensitivity_sweep(model, coords, stats, &spec)
        })
        .collect()
}

/// Normalized coordinate rows `rows` of `coords`.
pub fn region_coords<T: Scalar>(coords: &Tensor<T>, rows: &[usize]) -> Result<Tensor<T>> {
    let d = coords.cols();
    let mut data = Vec::with_capacity(rows.len() * d);
    for &i in rows {
        data.extend_from_slice(coords.row_slice(i));
    }
    Tensor::matrix(rows.len(), d, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_points_inclusive() {
        assert_eq!(sweep_points((0.0, 1.0), 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(sweep_points((0.2, 1.0), 1), vec![0.2]);
    }
}

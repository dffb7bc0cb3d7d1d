use crate::error::{contract, Result};

fn check_pair(gt: &[f64], pred: &[f64]) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(contract(format!(
            "ground truth has {} values, prediction {}",
            gt.len(),
            pred.len()
        )));
    }
    if gt.is_empty() {
        return Err(contract("metrics need at least one value"));
    }
    Ok(())
}

pub fn mse(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(gt, pred)?;
    Ok(gt.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / gt.len() as f64)
}

/// `10·log10(range² / MSE)` in dB; `+∞` when the fields agree exactly.
pub fn psnr(gt: &[f64], pred: &[f64], range: f64) -> Result<f64> {
    if !(range > 0.0) {
        return Err(contract(format!("PSNR range {range} must be positive")));
    }
    Ok(psnr_from_mse(mse(gt, pred)?, range))
}

pub fn psnr_from_mse(mse: f64, range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (range * range / mse).log10()
    }
}

/// Largest absolute error relative to the ground-truth range.
pub fn max_diff(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(gt, pred)?;
    let (lo, hi) = gt.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        return Err(contract("maximum difference is undefined for a constant ground truth"));
    }
    let worst = gt.iter().zip(pred).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(worst / (hi - lo))
}

use crate::data::lattice_slice;
use crate::error::{contract, Result};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" Gaussian filtering of an `h×w` image.
fn filter(img: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..WINDOW).map(|t| k[t] * img[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..WINDOW).map(|t| k[t] * rows[(r + t) * ow + c]).sum();
        }
    }
    out
}

/// Structural similarity of two `h×w` slices with values in `[0,1]`:
/// 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03, mean over the
/// windows that fit entirely inside the slice.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < WINDOW || w < WINDOW {
        return Err(contract(format!("SSIM needs slices of at least {WINDOW}×{WINDOW}, got {h}×{w}")));
    }
    if a.len() != h * w || b.len() != h * w {
        return Err(contract(format!("SSIM slices must hold {h}×{w} values")));
    }
    let k = gaussian_kernel();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter(a, h, w, &k);
    let mu_b = filter(b, h, w, &k);
    let aa = filter(&prod(a, a), h, w, &k);
    let bb = filter(&prod(b, b), h, w, &k);
    let ab = filter(&prod(a, b), h, w, &k);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// SSIM of a gridded field: the mid-slice along each axis (both inputs
/// scaled by the ground-truth range), averaged. A 2-D lattice is its own slice.
pub fn ssim_volume(gt: &[f64], pred: &[f64], dims: &[usize], range: [f64; 2]) -> Result<f64> {
    let span = range[1] - range[0];
    if !(span > 0.0) {
        return Err(contract("SSIM needs a positive field range"));
    }
    let scale = |v: f64| (v - range[0]) / span;
    if dims.len() == 2 {
        let a: Vec<f64> = gt.iter().map(|&v| scale(v)).collect();
        let b: Vec<f64> = pred.iter().map(|&v| scale(v)).collect();
        return ssim(&a, &b, dims[0], dims[1]);
    }
    if dims.len() != 3 {
        return Err(contract(format!("SSIM supports 2-D and 3-D lattices, got {}-D", dims.len())));
    }
    let mut total = 0.0;
    for axis in 0..3 {
        let (idx, ext) = lattice_slice(dims, axis, dims[axis] / 2)?;
        let a: Vec<f64> = idx.iter().map(|&i| scale(gt[i])).collect();
        let b: Vec<f64> = idx.iter().map(|&i| scale(pred[i])).collect();
        total += ssim(&a, &b, ext[0], ext[1])?;
    }
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[10]);
    }

    #[test]
    fn undersized_slice() {
        assert!(ssim(&[0.0; 100], &[0.0; 100], 10, 10).is_err());
    }

    #[test]
    fn constant_slices_are_similar() {
        assert!((ssim(&[0.3; 144], &[0.3; 144], 12, 12).unwrap() - 1.0).abs() < 1e-12);
    }
}

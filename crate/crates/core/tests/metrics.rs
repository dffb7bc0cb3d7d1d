use fainr_core::metrics::{max_diff, mse, per_expert_psnr, psnr, ssim, ssim_volume};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
}

/// Direct 2-D windowed SSIM with a full (non-separable) Gaussian kernel.
fn ssim_reference(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let total_g: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / total_g).collect();
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    let mut windows = 0;
    for r in 0..=h - 11 {
        for c in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = g[i] * g[j];
                    let (x, y) = (a[(r + i) * w + c + j], b[(r + i) * w + c + j]);
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    acc / windows as f64
}

#[test]
fn psnr_of_mse_one_hundredth_is_twenty_db() {
    let gt = vec![0.5; 100];
    let pred: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.6 } else { 0.4 }).collect();
    assert!((mse(&gt, &pred).unwrap() - 0.01).abs() < 1e-15);
    assert!((psnr(&gt, &pred, 1.0).unwrap() - 20.0).abs() < 1e-6);
}

#[test]
fn psnr_matches_two_pass_recomputation() {
    let gt = noise(5000, 1);
    let pred = noise(5000, 2);
    let (lo, hi) = gt.iter().fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    let mut sq = 0.0;
    for i in 0..gt.len() {
        sq += (pred[i] - gt[i]).powi(2);
    }
    let reference = 20.0 * (hi - lo).log10() - 10.0 * (sq / gt.len() as f64).log10();
    assert!((psnr(&gt, &pred, hi - lo).unwrap() - reference).abs() < 1e-9);
}

#[test]
fn psnr_sentinel_and_errors() {
    assert_eq!(psnr(&[0.3], &[0.3], 1.0).unwrap(), f64::INFINITY);
    assert!(psnr(&[], &[], 1.0).is_err());
    assert!(psnr(&[0.0, 1.0], &[0.0], 1.0).is_err());
    assert!(psnr(&[0.0], &[1.0], -1.0).is_err());
}

#[test]
fn max_diff_examples() {
    assert_eq!(max_diff(&[0.0, 1.0], &[0.1, 1.0]).unwrap(), 0.1);
    assert_eq!(max_diff(&[0.0, 1.0, 0.4], &[0.0, 1.0, 0.4]).unwrap(), 0.0);
    assert!(max_diff(&[2.0, 2.0], &[2.0, 2.0]).is_err());
}

#[test]
fn max_diff_matches_brute_force_scan() {
    let gt = noise(777, 3);
    let pred = noise(777, 4);
    let mut worst = 0.0f64;
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for i in 0..gt.len() {
        worst = worst.max((gt[i] - pred[i]).abs());
        lo = lo.min(gt[i]);
        hi = hi.max(gt[i]);
    }
    assert_eq!(max_diff(&gt, &pred).unwrap(), worst / (hi - lo));
}

#[test]
fn ssim_of_identical_slices_is_one() {
    for (h, w, seed) in [(11, 11, 0), (16, 23, 1), (32, 32, 2)] {
        let a = noise(h * w, seed);
        assert!((ssim(&a, &a, h, w).unwrap() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn ssim_matches_direct_windowed_reference() {
    let (h, w) = (17, 14);
    let a = noise(h * w, 5);
    let b: Vec<f64> = a.iter().zip(noise(h * w, 6)).map(|(x, n)| 0.7 * x + 0.3 * n).collect();
    let fast = ssim(&a, &b, h, w).unwrap();
    let slow = ssim_reference(&a, &b, h, w);
    assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    assert!(fast > 0.0 && fast < 1.0);
}

#[test]
fn inverted_checkerboard_has_negative_ssim() {
    let n = 16;
    let gt: Vec<f64> = (0..n * n).map(|k| ((k / n + k % n) % 2) as f64).collect();
    let inv: Vec<f64> = gt.iter().map(|v| 1.0 - v).collect();
    let s = ssim(&gt, &inv, n, n).unwrap();
    assert!(s < 0.0, "{s}");
    assert!((s - ssim_reference(&gt, &inv, n, n)).abs() < 1e-12);
}

#[test]
fn constant_slices_are_identical_under_stabilizers() {
    assert!((ssim(&[0.0; 121], &[0.0; 121], 11, 11).unwrap() - 1.0).abs() < 1e-12);
    assert!((ssim(&[0.8; 144], &[0.8; 144], 12, 12).unwrap() - 1.0).abs() < 1e-12);
    assert!(ssim(&[0.2; 144], &[0.9; 144], 12, 12).unwrap() < 1.0);
}

#[test]
fn ssim_rejects_small_or_mismatched_slices() {
    assert!(ssim(&[0.0; 110], &[0.0; 110], 10, 11).is_err());
    assert!(ssim(&[0.0; 121], &[0.0; 120], 11, 11).is_err());
}

#[test]
fn volume_ssim_of_identical_fields_is_one() {
    let dims = [12, 13, 14];
    let v: Vec<f64> = noise(12 * 13 * 14, 8).iter().map(|x| 3.0 + 2.0 * x).collect();
    assert!((ssim_volume(&v, &v, &dims, [3.0, 5.0]).unwrap() - 1.0).abs() < 1e-9);
    assert!(ssim_volume(&v, &v, &[2184], [3.0, 5.0]).is_err());
}

#[test]
fn per_expert_entries_match_subset_psnr() {
    let n = 400;
    let gt = noise(n, 9);
    let pred: Vec<f64> = gt.iter().zip(noise(n, 10)).map(|(g, e)| g + 0.05 * (e - 0.5)).collect();
    let assign: Vec<usize> = (0..n).map(|i| usize::from(i >= 150)).collect();
    let table = per_expert_psnr(&assign, 2, &gt, &pred, 1.0).unwrap();
    assert_eq!(table.iter().map(|t| t.count).sum::<usize>(), n);
    for (e, range) in [(0usize, 0..150), (1, 150..n)] {
        let sub = psnr(&gt[range.clone()], &pred[range], 1.0).unwrap();
        assert!((table[e].psnr.unwrap() - sub).abs() < 1e-12);
    }
    let single = per_expert_psnr(&vec![0; n], 1, &gt, &pred, 1.0).unwrap();
    assert!((single[0].psnr.unwrap() - psnr(&gt, &pred, 1.0).unwrap()).abs() < 1e-12);
}

#[test]
fn per_expert_pools_several_members() {
    let assign = [0usize, 1, 1, 2];
    let gt = [0.0, 0.1, 0.2, 0.3, 1.0, 0.9, 0.8, 0.7];
    let pred = [0.1, 0.1, 0.2, 0.3, 1.0, 0.9, 0.6, 0.7];
    let t = per_expert_psnr(&assign, 4, &gt, &pred, 1.0).unwrap();
    assert!((t[0].psnr.unwrap() - psnr(&[0.0, 1.0], &[0.1, 1.0], 1.0).unwrap()).abs() < 1e-12);
    let e1 = psnr(&[0.1, 0.2, 0.9, 0.8], &[0.1, 0.2, 0.9, 0.6], 1.0).unwrap();
    assert!((t[1].psnr.unwrap() - e1).abs() < 1e-12);
    assert_eq!(t[2].psnr, Some(f64::INFINITY));
    assert_eq!((t[3].count, t[3].psnr), (0, None));
    assert!(per_expert_psnr(&[0, 5], 2, &[0.0, 1.0], &[0.0, 1.0], 1.0).is_err());
}

proptest! {
    #[test]
    fn psnr_symmetric_and_decreasing(seed in any::<u64>(), n in 1usize..200, k in 1.1f64..5.0) {
        let gt = noise(n, seed);
        let pred: Vec<f64> = noise(n, seed ^ 0x55);
        prop_assume!(gt != pred);
        let a = psnr(&gt, &pred, 1.0).unwrap();
        prop_assert_eq!(a, psnr(&pred, &gt, 1.0).unwrap());
        let worse: Vec<f64> = gt.iter().zip(&pred).map(|(g, p)| g + k * (p - g)).collect();
        prop_assert!(psnr(&gt, &worse, 1.0).unwrap() < a);
    }

    #[test]
    fn max_diff_zero_iff_identical(seed in any::<u64>(), n in 2usize..100, i in 0usize..100) {
        let gt = noise(n, seed);
        prop_assert_eq!(max_diff(&gt, &gt).unwrap(), 0.0);
        let mut pred = gt.clone();
        pred[i % n] += 1e-9;
        prop_assert!(max_diff(&gt, &pred).unwrap() > 0.0);
    }

    #[test]
    fn ssim_is_bounded_and_reflexive(seed in any::<u64>(), h in 11usize..20, w in 11usize..20) {
        let a = noise(h * w, seed);
        let b = noise(h * w, seed.wrapping_add(1));
        let s = ssim(&a, &b, h, w).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((ssim(&a, &a, h, w).unwrap() - 1.0).abs() < 1e-6);
    }
}

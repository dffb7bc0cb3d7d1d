//! Reconstruction metrics: PSNR, normalized maximum difference, SSIM on
//! slices, and per-member and per-expert aggregation.

mod fidelity;
mod report;
mod ssim;

pub use fidelity::{max_diff, mse, psnr, psnr_from_mse};
pub use report::{evaluate, per_expert_psnr, ExpertScore, MemberMetrics, MetricReport};
pub use ssim::{ssim, ssim_volume};

//! Reconstruction quality metrics and cost accounting.

mod cost;
mod quality;
mod timing;

pub use cost::{
    attention_quadratic_flops, carsa_window_flops, count_flops, count_params, dense_window_flops, CostReport,
    ModuleCost,
};
pub use quality::{luma, psnr, psnr_plane, ssim, Psnr};
pub use timing::{time_inference, TimingStats};

//! JSON report written next to every encoded file.

use std::path::PathBuf;

use serde::Serialize;
use splatcodec::metrics::QualityReport;
use splatcodec::{Budget, EncoderConfig};

#[derive(Debug, Serialize)]
pub struct ConfigRecord {
    pub lambda_m: f64,
    pub lambda_g: f64,
    pub lambda_l: f64,
    pub k_neighbors: usize,
    pub tile_size: usize,
    pub variance_window: usize,
    pub iterations: usize,
    pub seed: u64,
    pub lr_means: f64,
    pub lr_scales: f64,
    pub lr_colors: f64,
    pub lr_thetas: f64,
    pub init: &'static str,
    pub mode: &'static str,
}

impl ConfigRecord {
    pub fn new(c: &EncoderConfig, init: &'static str, mode: &'static str) -> Self {
        Self {
            lambda_m: c.lambda_m,
            lambda_g: c.lambda_g,
            lambda_l: c.lambda_l,
            k_neighbors: c.k_neighbors,
            tile_size: c.tile_size,
            variance_window: c.variance_window,
            iterations: c.iterations,
            seed: c.seed,
            lr_means: c.learning_rates.means,
            lr_scales: c.learning_rates.scales,
            lr_colors: c.learning_rates.colors,
            lr_thetas: c.learning_rates.thetas,
            init,
            mode,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct BudgetRecord {
    pub requested_cr: f64,
    pub n_g: usize,
    pub n_vs: usize,
    pub n_us: usize,
    pub s_base: f64,
}

impl From<&Budget> for BudgetRecord {
    fn from(b: &Budget) -> Self {
        Self {
            requested_cr: b.cr,
            n_g: b.n_g,
            n_vs: b.n_vs,
            n_us: b.n_us,
            s_base: b.s_base,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Timings {
    pub init_s: f64,
    pub train_s: f64,
    pub encode_s: f64,
}

#[derive(Debug, Serialize)]
pub struct Quality {
    pub psnr: f64,
    pub ssim: f64,
    /// `None` when the image is too small for five scales.
    pub ms_ssim: Option<f64>,
}

impl From<QualityReport> for Quality {
    fn from(q: QualityReport) -> Self {
        Self {
            psnr: q.psnr,
            ssim: q.ssim,
            ms_ssim: q.ms_ssim,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub input: PathBuf,
    pub output: PathBuf,
    pub height: usize,
    pub width: usize,
    pub config: ConfigRecord,
    pub budget: BudgetRecord,
    /// `3HW / (7 n_g)`: the ratio the budget actually grants.
    pub nominal_ratio: f64,
    /// `3HW / file size`.
    pub achieved_ratio: f64,
    pub bytes: usize,
    pub final_loss: f64,
    pub timings: Timings,
    /// Decoded file against the input.
    pub quality: Quality,
}

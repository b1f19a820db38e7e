//! Shared fixtures for the benchmarks.

use std::path::Path;

use splatcodec::io::load_image;
use splatcodec::{compute_budget, initialize, EncoderConfig, GaussianSet, ImageBuffer};

/// A corpus image together with its initialized primitive set.
pub struct Fixture {
    pub image: ImageBuffer,
    pub set: GaussianSet<f32>,
    pub config: EncoderConfig,
}

pub fn corpus_image(stem: &str) -> ImageBuffer {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus").join(format!("{stem}.png"));
    load_image(&path).unwrap_or_else(|e| panic!("{e}"))
}

pub fn fixture(stem: &str, cr: f64) -> Fixture {
    let image = corpus_image(stem);
    let config = EncoderConfig::default();
    let (h, w) = image.dims();
    let budget = compute_budget(h, w, cr, config.lambda_g).expect("feasible ratio");
    let set = initialize(&image, &budget, &config).expect("initialization").set;
    Fixture { image, set, config }
}

/// The image as interleaved f64, the form the loss expects.
pub fn as_f64(image: &ImageBuffer) -> Vec<f64> {
    image.data().iter().map(|&v| v as f64).collect()
}

//! Image files and debug dumps.

use std::io::Write;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::features::{TilePlan, WeightMap};
use crate::init::{SampleOrigin, SamplePoint};
use crate::model::ImageBuffer;
use crate::train::TrainState;

/// Loads any raster format the `image` crate can decode, as 8-bit RGB in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path)
        .map_err(|source| Error::ImageRead {
            path: path.to_path_buf(),
            source,
        })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    ImageBuffer::new(h as usize, w as usize, data)
}

pub fn to_rgb8(image: &ImageBuffer) -> RgbImage {
    let raw = image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    RgbImage::from_raw(image.width() as u32, image.height() as u32, raw).expect("buffer length matches dimensions")
}

/// Round-trips through 8-bit, matching what a saved PNG holds.
pub fn quantize_8bit(image: &ImageBuffer) -> ImageBuffer {
    let data = to_rgb8(image).into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    ImageBuffer::new(image.height(), image.width(), data).expect("8-bit values are in range")
}

fn save(path: &Path, result: image::ImageResult<()>) -> Result<()> {
    result.map_err(|source| Error::ImageWrite {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_image(image: &ImageBuffer, path: &Path) -> Result<()> {
    save(path, to_rgb8(image).save(path))
}

/// Stitches the per-tile weight maps into one grayscale image, scaled so the
/// largest weight is white. Overlapping tiles keep the larger value.
pub fn save_weight_map(plan: &TilePlan, maps: &[WeightMap], height: usize, width: usize, path: &Path) -> Result<()> {
    let mut canvas = vec![0.0f64; height * width];
    for (tile, map) in plan.tiles.iter().zip(maps) {
        for r in 0..map.height {
            for c in 0..map.width {
                let i = (tile.row + r) * width + tile.col + c;
                canvas[i] = canvas[i].max(map.at(r, c));
            }
        }
    }
    let peak = canvas.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| {
        Luma([(canvas[y as usize * width + x as usize] / peak * 255.0).round() as u8])
    });
    save(path, img.save(path))
}

/// Draws sample positions over a dimmed copy of the image: variational
/// samples red, uniform samples green, degraded uniform samples blue.
pub fn save_sample_scatter(image: &ImageBuffer, samples: &[SamplePoint], path: &Path) -> Result<()> {
    let mut img = to_rgb8(image);
    for p in img.pixels_mut() {
        p.0 = p.0.map(|v| v / 3);
    }
    let (w, h) = (image.width() as i64, image.height() as i64);
    for s in samples {
        let color = match s.origin {
            SampleOrigin::Variational => Rgb([255, 40, 40]),
            SampleOrigin::Uniform { degraded: false } => Rgb([40, 255, 40]),
            SampleOrigin::Uniform { degraded: true } => Rgb([60, 60, 255]),
        };
        let (x, y) = (s.position[0].floor() as i64, s.position[1].floor() as i64);
        for (dx, dy) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (px, py) = (x + dx, y + dy);
            if (0..w).contains(&px) && (0..h).contains(&py) {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
    save(path, img.save(path))
}

/// `step,loss,psnr` with an empty PSNR cell on steps where it was not recorded.
pub fn write_history_csv(state: &TrainState, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "step,loss,psnr")?;
    let mut psnr = state.psnr_history.iter().peekable();
    for (step, loss) in state.loss_history.iter().enumerate() {
        write!(out, "{step},{loss:.8}")?;
        if let Some(&&(s, p)) = psnr.peek() {
            if s == step {
                write!(out, ",{p:.4}")?;
                psnr.next();
            } else {
                write!(out, ",")?;
            }
        } else {
            write!(out, ",")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

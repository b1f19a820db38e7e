//! Independent reference implementations used by the integration tests.
//! These are deliberately naive: direct sums, all-pairs searches and
//! exhaustive minimization.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use splatcodec::io::load_image;
use splatcodec::{render, GaussianSet, ImageBuffer};

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus")
}

pub fn corpus() -> Vec<(String, ImageBuffer)> {
    let mut names: Vec<_> = std::fs::read_dir(corpus_dir())
        .expect("corpus directory present")
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, load_image(&p).expect("corpus image decodes"))
        })
        .collect()
}

pub fn corpus_image(stem: &str) -> ImageBuffer {
    load_image(&corpus_dir().join(format!("{stem}.png"))).expect("corpus image decodes")
}

// ---------------------------------------------------------------------------
// Renderer finite differences

/// Scalar objective `sum_p upstream_p * pixel_p`.
pub fn linear_objective(set: &GaussianSet<f64>, h: usize, w: usize, upstream: &[f64]) -> f64 {
    render(set, h, w).pixels.iter().zip(upstream).map(|(p, u)| p * u).sum()
}

/// Random scene of up to `max_prims` primitives whose rendering is smooth in
/// every parameter: no pixel centre sits near a culling-box edge, no
/// transmittance gets near the termination threshold, colours and scales stay
/// clear of their clamps. Returns `None` when the draw violates any of these.
pub fn smooth_scene(rng: &mut impl Rng, h: usize, w: usize, max_prims: usize) -> Option<GaussianSet<f64>> {
    let n = rng.gen_range(1..=max_prims);
    let mut set = GaussianSet::with_capacity(n);
    for _ in 0..n {
        set.push(
            [rng.gen_range(2.0..w as f64 - 2.0), rng.gen_range(2.0..h as f64 - 2.0)],
            [rng.gen_range(0.8f64..4.0).ln(), rng.gen_range(0.8f64..4.0).ln()],
            rng.gen_range(0.0..std::f64::consts::TAU),
            [rng.gen_range(0.05..0.45), rng.gen_range(0.05..0.45), rng.gen_range(0.05..0.45)],
        );
    }
    let margin = 1e-4;
    for i in 0..n {
        let radius = 3.0 * set.log_scales[i][0].exp().max(set.log_scales[i][1].exp());
        let [mx, my] = set.means[i];
        for c in 0..w {
            if ((c as f64 + 0.5 - mx).abs() - radius).abs() < margin {
                return None;
            }
        }
        for r in 0..h {
            if ((r as f64 + 0.5 - my).abs() - radius).abs() < margin {
                return None;
            }
        }
    }
    let out = render(&set, h, w);
    for r in 0..h {
        for c in 0..w {
            if out.transmittance_trace(r, c).iter().any(|&t| t < 1e-3) {
                return None;
            }
        }
    }
    Some(set)
}

/// Every scalar parameter of a set as `(name, getter, setter)` indices.
pub fn parameter_count(n: usize) -> usize {
    n * 8
}

pub fn get_param(set: &GaussianSet<f64>, idx: usize) -> f64 {
    let (i, f) = (idx / 8, idx % 8);
    match f {
        0 | 1 => set.means[i][f],
        2 | 3 => set.log_scales[i][f - 2],
        4 => set.thetas[i],
        _ => set.colors[i][f - 5],
    }
}

pub fn set_param(set: &mut GaussianSet<f64>, idx: usize, v: f64) {
    let (i, f) = (idx / 8, idx % 8);
    match f {
        0 | 1 => set.means[i][f] = v,
        2 | 3 => set.log_scales[i][f - 2] = v,
        4 => set.thetas[i] = v,
        _ => set.colors[i][f - 5] = v,
    }
}

pub fn param_name(idx: usize) -> String {
    let names = ["mean_x", "mean_y", "log_sx", "log_sy", "theta", "r", "g", "b"];
    format!("{}[{}]", names[idx % 8], idx / 8)
}

pub fn central_difference(set: &GaussianSet<f64>, idx: usize, h: usize, w: usize, upstream: &[f64], step: f64) -> f64 {
    let mut plus = set.clone();
    let mut minus = set.clone();
    let v = get_param(set, idx);
    set_param(&mut plus, idx, v + step);
    set_param(&mut minus, idx, v - step);
    (linear_objective(&plus, h, w, upstream) - linear_objective(&minus, h, w, upstream)) / (2.0 * step)
}

/// Relative tolerance with an absolute floor for values near zero.
pub fn close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs || diff <= rel * analytic.abs().max(numeric.abs())
}

// ---------------------------------------------------------------------------
// Weighted median and KNN

/// Value minimizing `sum w |z - v|` over the sample values, smallest on ties.
pub fn brute_weighted_median(samples: &[(f64, f64)]) -> f64 {
    let mut best = (f64::INFINITY, f64::INFINITY);
    for &(z, _) in samples {
        let cost: f64 = samples.iter().map(|&(v, w)| w * (z - v).abs()).sum();
        if cost < best.0 || (cost == best.0 && z < best.1) {
            best = (cost, z);
        }
    }
    best.1
}

/// Exhaustive Gaussian-weighted median colour over every image pixel whose
/// centre lies within `scale` of `center`.
pub fn brute_median_color(image: &ImageBuffer, center: [f64; 2], scale: f64) -> Option<[f32; 3]> {
    let mut per: [Vec<(f64, f64)>; 3] = Default::default();
    for r in 0..image.height() {
        for c in 0..image.width() {
            let dx = c as f64 + 0.5 - center[0];
            let dy = r as f64 + 0.5 - center[1];
            let d2 = dx * dx + dy * dy;
            if d2 <= scale * scale {
                let wt = (-d2 / (2.0 * scale * scale)).exp();
                for (ch, list) in per.iter_mut().enumerate() {
                    list.push((image.get(r, c, ch) as f64, wt));
                }
            }
        }
    }
    if per[0].is_empty() {
        return None;
    }
    Some(per.map(|list| brute_weighted_median(&list) as f32))
}

pub fn brute_knn_rms(points: &[[f64; 2]], query: usize, k: usize) -> f64 {
    let p = points[query];
    let mut d2: Vec<f64> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != query)
        .map(|(_, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        .collect();
    d2.sort_by(f64::total_cmp);
    (d2[..k].iter().sum::<f64>() / k as f64).sqrt()
}

// ---------------------------------------------------------------------------
// SSIM

/// Direct 11x11 sliding-window SSIM, valid positions only, channel-averaged.
pub fn naive_ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    const K: usize = 11;
    let sigma = 1.5f64;
    let mut win = [[0.0f64; K]; K];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (h, w) = (a.height(), a.width());
    let mut sum = 0.0;
    for ch in 0..3 {
        let mut acc = 0.0;
        for r in 0..=h - K {
            for c in 0..=w - K {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..K {
                    for j in 0..K {
                        let g = win[i][j] / total;
                        let x = a.get(r + i, c + j, ch) as f64;
                        let y = b.get(r + i, c + j, ch) as f64;
                        mx += g * x;
                        my += g * y;
                        xx += g * x * x;
                        yy += g * y * y;
                        xy += g * x * y;
                    }
                }
                let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        sum += acc / ((h - K + 1) * (w - K + 1)) as f64;
    }
    sum / 3.0
}

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> ImageBuffer {
    // Smooth blobs plus noise, so both saliency maps have structure.
    let blobs: Vec<([f64; 2], f64, [f32; 3])> = (0..6)
        .map(|_| {
            (
                [rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64)],
                rng.gen_range(2.0..(h.min(w) as f64 / 2.0).max(3.0)),
                [rng.gen(), rng.gen(), rng.gen()],
            )
        })
        .collect();
    let noise: Vec<f32> = (0..h * w * 3).map(|_| rng.gen_range(-0.05..0.05)).collect();
    ImageBuffer::from_fn(h, w, |r, c| {
        let mut px = [0.2f32; 3];
        for (centre, radius, color) in &blobs {
            let d = ((c as f64 - centre[0]).powi(2) + (r as f64 - centre[1]).powi(2)).sqrt();
            if d < *radius {
                px = *color;
            }
        }
        std::array::from_fn(|ch| px[ch] + noise[(r * w + c) * 3 + ch])
    })
}

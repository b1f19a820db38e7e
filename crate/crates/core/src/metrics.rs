//! PSNR, SSIM and MS-SSIM.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5) evaluated only where the
//! window fits inside the image, with the usual stabilizers
//! `C1 = 0.01^2`, `C2 = 0.03^2` for a unit dynamic range. Colour images are
//! scored per channel and averaged.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ImageBuffer;

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// Smallest side that still fits the window at the coarsest of five scales.
pub const MS_SSIM_MIN_SIDE: usize = SSIM_WINDOW << (MS_SSIM_WEIGHTS.len() - 1);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityReport {
    pub psnr: f64,
    pub ssim: f64,
    /// `None` when the image is too small for five scales.
    pub ms_ssim: Option<f64>,
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(psnr_from_mse(sse / a.data().len() as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - half;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// One image plane, row-major.
#[derive(Clone, Debug)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(data: &[f64], h: usize, w: usize, ch: usize) -> Self {
        Plane {
            h,
            w,
            v: data.iter().skip(ch).step_by(3).copied().collect(),
        }
    }

    fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            v: self.v.iter().zip(&other.v).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Separable correlation with the window, keeping only positions where it fits.
    fn filter_valid(&self, taps: &[f64; SSIM_WINDOW]) -> Plane {
        let k = SSIM_WINDOW;
        let (oh, ow) = (self.h + 1 - k, self.w + 1 - k);
        let mut horiz = vec![0.0; self.h * ow];
        horiz.par_chunks_mut(ow).enumerate().for_each(|(r, out)| {
            correlate_row(&self.v[r * self.w..(r + 1) * self.w], taps, out);
        });
        let mut v = vec![0.0; oh * ow];
        v.par_chunks_mut(ow).enumerate().for_each(|(r, out)| {
            correlate_rows(&horiz[r * ow..(r + k) * ow], ow, taps, out);
        });
        Plane { h: oh, w: ow, v }
    }

    /// Adjoint of [`Plane::filter_valid`]: scatters a valid-sized map back to
    /// `h x w`. This is the valid correlation of the zero-padded map with the
    /// reversed taps.
    fn filter_valid_adjoint(&self, taps: &[f64; SSIM_WINDOW], h: usize, w: usize) -> Plane {
        let pad = SSIM_WINDOW - 1;
        debug_assert_eq!((self.h + pad, self.w + pad), (h, w));
        let pw = self.w + 2 * pad;
        let mut padded = vec![0.0; (self.h + 2 * pad) * pw];
        for r in 0..self.h {
            padded[(r + pad) * pw + pad..(r + pad) * pw + pad + self.w].copy_from_slice(&self.v[r * self.w..(r + 1) * self.w]);
        }
        let mut reversed = *taps;
        reversed.reverse();
        Plane {
            h: self.h + 2 * pad,
            w: pw,
            v: padded,
        }
        .filter_valid(&reversed)
    }

    /// 2x2 mean pooling, dropping a trailing odd row or column.
    fn downsample(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut v = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let at = |rr: usize, cc: usize| self.v[rr * self.w + cc];
                v.push(0.25 * (at(2 * r, 2 * c) + at(2 * r, 2 * c + 1) + at(2 * r + 1, 2 * c) + at(2 * r + 1, 2 * c + 1)));
            }
        }
        Plane { h, w, v }
    }
}

/// Output columns computed together so their partial sums stay in registers.
const BLOCK: usize = 8;

/// `out[c] = sum_i taps[i] * src[c + i]`.
#[inline]
fn correlate_row(src: &[f64], taps: &[f64; SSIM_WINDOW], out: &mut [f64]) {
    let n = out.len();
    debug_assert!(src.len() >= n + SSIM_WINDOW - 1);
    let mut c = 0;
    while c + BLOCK <= n {
        let mut acc = [0.0; BLOCK];
        for (i, &t) in taps.iter().enumerate() {
            let s = &src[c + i..c + i + BLOCK];
            for j in 0..BLOCK {
                acc[j] += t * s[j];
            }
        }
        out[c..c + BLOCK].copy_from_slice(&acc);
        c += BLOCK;
    }
    for (c, o) in out.iter_mut().enumerate().skip(c) {
        let mut acc = 0.0;
        for (i, &t) in taps.iter().enumerate() {
            acc += t * src[c + i];
        }
        *o = acc;
    }
}

/// `out[c] = sum_i taps[i] * src[i * stride + c]` over `SSIM_WINDOW` rows.
#[inline]
fn correlate_rows(src: &[f64], stride: usize, taps: &[f64; SSIM_WINDOW], out: &mut [f64]) {
    let n = out.len();
    let mut c = 0;
    while c + BLOCK <= n {
        let mut acc = [0.0; BLOCK];
        for (i, &t) in taps.iter().enumerate() {
            let s = &src[i * stride + c..i * stride + c + BLOCK];
            for j in 0..BLOCK {
                acc[j] += t * s[j];
            }
        }
        out[c..c + BLOCK].copy_from_slice(&acc);
        c += BLOCK;
    }
    for (c, o) in out.iter_mut().enumerate().skip(c) {
        let mut acc = 0.0;
        for (i, &t) in taps.iter().enumerate() {
            acc += t * src[i * stride + c];
        }
        *o = acc;
    }
}

/// Local statistics of a plane pair under the window.
struct LocalStats {
    mu_x: Plane,
    mu_y: Plane,
    var_x: Plane,
    var_y: Plane,
    cov: Plane,
}

fn local_stats(x: &Plane, y: &Plane, taps: &[f64; SSIM_WINDOW]) -> LocalStats {
    let mu_x = x.filter_valid(taps);
    let mu_y = y.filter_valid(taps);
    let xx = x.zip(x, |a, _| a * a).filter_valid(taps);
    let yy = y.zip(y, |a, _| a * a).filter_valid(taps);
    let xy = x.zip(y, |a, b| a * b).filter_valid(taps);
    let mut cov = xy;
    for (c, (mx, my)) in cov.v.iter_mut().zip(mu_x.v.iter().zip(&mu_y.v)) {
        *c -= mx * my;
    }
    LocalStats {
        var_x: xx.zip(&mu_x, |e, m| e - m * m),
        var_y: yy.zip(&mu_y, |e, m| e - m * m),
        cov,
        mu_x,
        mu_y,
    }
}

impl LocalStats {
    /// Mean SSIM and mean contrast-structure term.
    fn means(&self) -> (f64, f64) {
        let n = self.mu_x.v.len();
        let mut ssim_rows = Vec::with_capacity(self.mu_x.h);
        let mut cs_rows = Vec::with_capacity(self.mu_x.h);
        for r in 0..self.mu_x.h {
            let (mut s_acc, mut cs_acc) = (0.0, 0.0);
            for i in r * self.mu_x.w..(r + 1) * self.mu_x.w {
                let (mx, my) = (self.mu_x.v[i], self.mu_y.v[i]);
                let lum = (2.0 * mx * my + C1) / (mx * mx + my * my + C1);
                let cs = (2.0 * self.cov.v[i] + C2) / (self.var_x.v[i] + self.var_y.v[i] + C2);
                s_acc += lum * cs;
                cs_acc += cs;
            }
            ssim_rows.push(s_acc);
            cs_rows.push(cs_acc);
        }
        (
            ssim_rows.iter().sum::<f64>() / n as f64,
            cs_rows.iter().sum::<f64>() / n as f64,
        )
    }
}

fn check_ssim_size(a: &ImageBuffer, min: usize) -> Result<()> {
    let (h, w) = a.dims();
    if h < min || w < min {
        return Err(Error::ImageTooSmall { height: h, width: w, min });
    }
    Ok(())
}

fn as_f64(img: &ImageBuffer) -> Vec<f64> {
    img.data().iter().map(|&v| v as f64).collect()
}

pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.ensure_same_shape(b)?;
    check_ssim_size(a, SSIM_WINDOW)?;
    Ok(ssim_rgb(&as_f64(a), &as_f64(b), a.height(), a.width()))
}

/// Channel-averaged mean SSIM of interleaved RGB data.
pub fn ssim_rgb(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let taps = gaussian_taps();
    let per: Vec<f64> = (0..3)
        .into_par_iter()
        .map(|ch| {
            let px = Plane::channel(x, h, w, ch);
            let py = Plane::channel(y, h, w, ch);
            local_stats(&px, &py, &taps).means().0
        })
        .collect();
    per.iter().sum::<f64>() / 3.0
}

/// Channel-averaged mean SSIM and its gradient with respect to `x`
/// (interleaved RGB, same layout as the input).
pub fn ssim_rgb_with_grad(x: &[f64], y: &[f64], h: usize, w: usize) -> (f64, Vec<f64>) {
    SsimReference::new(y, h, w).value_and_grad(x)
}

struct ReferenceChannel {
    y: Plane,
    mu_y: Plane,
    var_y: Plane,
}

/// Window statistics of a fixed reference image, so repeated SSIM gradient
/// evaluations against it only filter the varying image.
pub struct SsimReference {
    h: usize,
    w: usize,
    taps: [f64; SSIM_WINDOW],
    channels: Vec<ReferenceChannel>,
}

impl SsimReference {
    /// `y` is interleaved RGB of size `h x w`.
    pub fn new(y: &[f64], h: usize, w: usize) -> Self {
        assert!(h >= SSIM_WINDOW && w >= SSIM_WINDOW, "image smaller than the SSIM window");
        assert_eq!(y.len(), h * w * 3, "reference has the wrong length");
        let taps = gaussian_taps();
        let channels = (0..3)
            .into_par_iter()
            .map(|ch| {
                let py = Plane::channel(y, h, w, ch);
                let mu_y = py.filter_valid(&taps);
                let yy = py.zip(&py, |a, _| a * a).filter_valid(&taps);
                ReferenceChannel {
                    var_y: yy.zip(&mu_y, |e, m| e - m * m),
                    mu_y,
                    y: py,
                }
            })
            .collect();
        Self { h, w, taps, channels }
    }

    /// Mean SSIM of `x` against the reference and its gradient w.r.t. `x`.
    pub fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (h, w, taps) = (self.h, self.w, &self.taps);
        assert_eq!(x.len(), h * w * 3, "input has the wrong length");
        let per: Vec<(f64, Plane)> = self
            .channels
            .par_iter()
            .enumerate()
            .map(|(ch, rc)| {
                let px = Plane::channel(x, h, w, ch);
                let mu_x = px.filter_valid(taps);
                let xx = px.zip(&px, |a, _| a * a).filter_valid(taps);
                let xy = px.zip(&rc.y, |a, b| a * b).filter_valid(taps);
                let n = mu_x.v.len();
                let (mut a, mut b, mut c) = (mu_x.clone(), mu_x.clone(), mu_x.clone());
                let mut rows = vec![0.0; mu_x.h];
                for (r, row_acc) in rows.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for i in r * mu_x.w..(r + 1) * mu_x.w {
                        let (mx, my) = (mu_x.v[i], rc.mu_y.v[i]);
                        let var_x = xx.v[i] - mx * mx;
                        let cov = xy.v[i] - mx * my;
                        let a1 = 2.0 * mx * my + C1;
                        let a2 = 2.0 * cov + C2;
                        let b1 = mx * mx + my * my + C1;
                        let b2 = var_x + rc.var_y.v[i] + C2;
                        let inv = 1.0 / (b1 * b2);
                        let map = a1 * a2 * inv;
                        acc += map;
                        // Partials of the SSIM map w.r.t. mu_x, var_x and cov.
                        let d_mu = 2.0 * my * a2 * inv - 2.0 * mx * map * b2 * inv;
                        let d_var = -map * b1 * inv;
                        let d_cov = 2.0 * a1 * inv;
                        a.v[i] = d_mu - 2.0 * d_var * mx - d_cov * my;
                        b.v[i] = d_var;
                        c.v[i] = d_cov;
                    }
                    *row_acc = acc;
                }
                let mean = rows.iter().sum::<f64>() / n as f64;
                let ga = a.filter_valid_adjoint(taps, h, w);
                let gb = b.filter_valid_adjoint(taps, h, w);
                let gc = c.filter_valid_adjoint(taps, h, w);
                let scale = 1.0 / (3.0 * n as f64);
                let grad = Plane {
                    h,
                    w,
                    v: (0..h * w)
                        .map(|i| scale * (ga.v[i] + 2.0 * px.v[i] * gb.v[i] + rc.y.v[i] * gc.v[i]))
                        .collect(),
                };
                (mean, grad)
            })
            .collect();
        let mut grad = vec![0.0; h * w * 3];
        let mut total = 0.0;
        for (ch, (mean, g)) in per.into_iter().enumerate() {
            total += mean;
            for (i, v) in g.v.into_iter().enumerate() {
                grad[i * 3 + ch] = v;
            }
        }
        (total / 3.0, grad)
    }
}

pub fn ms_ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.ensure_same_shape(b)?;
    check_ssim_size(a, MS_SSIM_MIN_SIDE)?;
    let (h, w) = a.dims();
    let (x, y) = (as_f64(a), as_f64(b));
    let taps = gaussian_taps();
    let per: Vec<f64> = (0..3)
        .into_par_iter()
        .map(|ch| {
            let mut px = Plane::channel(&x, h, w, ch);
            let mut py = Plane::channel(&y, h, w, ch);
            let mut score = 1.0;
            let last = MS_SSIM_WEIGHTS.len() - 1;
            for (scale, weight) in MS_SSIM_WEIGHTS.iter().enumerate() {
                let (ssim_mean, cs_mean) = local_stats(&px, &py, &taps).means();
                let term = if scale == last { ssim_mean } else { cs_mean };
                score *= term.max(0.0).powf(*weight);
                if scale < last {
                    px = px.downsample();
                    py = py.downsample();
                }
            }
            score
        })
        .collect();
    Ok(per.iter().sum::<f64>() / 3.0)
}

/// PSNR and SSIM always; MS-SSIM when the image is large enough.
pub fn evaluate(reference: &ImageBuffer, test: &ImageBuffer) -> Result<QualityReport> {
    let psnr = psnr(reference, test)?;
    let ssim = ssim(reference, test)?;
    let ms_ssim = match ms_ssim(reference, test) {
        Ok(v) => Some(v),
        Err(Error::ImageTooSmall { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(QualityReport { psnr, ssim, ms_ssim })
}

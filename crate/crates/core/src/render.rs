//! Differentiable rasterizer for 2D Gaussian primitives.
//!
//! Each primitive evaluates `G(x) = exp(-1/2 d^T Sigma^-1 d)` with
//! `Sigma = R S S^T R^T`, and contributes only to pixel centres inside its
//! axis-aligned 3-sigma box. Pixels composite front to back in ascending
//! primitive index with opacity 1:
//!
//! ```text
//! c += color_i * G_i * T
//! T *= 1 - G_i
//! ```
//!
//! stopping once `T` drops below [`TRANSMITTANCE_EPS`]. The forward pass
//! records, per pixel, which primitives contributed and their `G` values so the
//! backward pass replays exactly the function that was computed.
//!
//! Work is split over fixed screen tiles. The backward pass accumulates into
//! per-tile buffers that are merged in tile order, so results do not depend on
//! the number of worker threads.

use rayon::prelude::*;

use crate::model::{BlendMode, GaussianSet, ImageBuffer, Real};

/// Lower bound on `exp(log_scale)` inside the renderer, in pixels.
pub const SCALE_FLOOR: f64 = 0.3;
/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
/// Side of the square screen tiles used for binning and parallelism.
pub const SCREEN_TILE: usize = 16;

#[inline]
pub fn rotation_matrix<T: Real>(theta: T) -> [[T; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[c, -s], [s, c]]
}

/// Effective scales after the renderer's floor, with flags for which axes are
/// floored (their log-scale gradient is zero).
#[inline]
fn floored_scales<T: Real>(log_scales: [T; 2]) -> ([T; 2], [bool; 2]) {
    let floor = T::lit(SCALE_FLOOR);
    let sx = log_scales[0].exp();
    let sy = log_scales[1].exp();
    ([sx.max(floor), sy.max(floor)], [sx < floor, sy < floor])
}

/// Value of one primitive at `point`, using the renderer's scale floor.
pub fn gaussian_value<T: Real>(mean: [T; 2], log_scales: [T; 2], theta: T, point: [T; 2]) -> T {
    let ([sx, sy], _) = floored_scales(log_scales);
    let (s, c) = theta.sin_cos();
    let dx = point[0] - mean[0];
    let dy = point[1] - mean[1];
    // Coordinates in the primitive's rotated frame: u = R^T d.
    let ux = c * dx + s * dy;
    let uy = c * dy - s * dx;
    let q = ux * ux / (sx * sx) + uy * uy / (sy * sy);
    (T::lit(-0.5) * q).exp()
}

#[derive(Clone, Copy, Debug)]
struct Prepared<T> {
    mean: [T; 2],
    cos: T,
    sin: T,
    inv_sx2: T,
    inv_sy2: T,
    floored: [bool; 2],
    radius: T,
    color: [T; 3],
    color_live: [bool; 3],
}

impl<T: Real> Prepared<T> {
    fn new(set: &GaussianSet<T>, i: usize) -> Self {
        let (s, floored) = floored_scales(set.log_scales[i]);
        let (sin, cos) = set.thetas[i].sin_cos();
        let raw = set.colors[i];
        Self {
            mean: set.means[i],
            cos,
            sin,
            inv_sx2: (s[0] * s[0]).recip(),
            inv_sy2: (s[1] * s[1]).recip(),
            floored,
            radius: T::lit(3.0) * s[0].max(s[1]),
            color: raw.map(|v| v.max(T::zero()).min(T::one())),
            color_live: raw.map(|v| v >= T::zero() && v <= T::one()),
        }
    }

    #[inline]
    fn covers(&self, px: T, py: T) -> bool {
        (px - self.mean[0]).abs() <= self.radius && (py - self.mean[1]).abs() <= self.radius
    }

    /// Offset of `(px, py)` from the mean in the primitive's rotated frame.
    #[inline]
    fn offset(&self, px: T, py: T) -> (T, T) {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        (self.cos * dx + self.sin * dy, self.cos * dy - self.sin * dx)
    }

    #[inline]
    fn eval(&self, px: T, py: T) -> T {
        let (ux, uy) = self.offset(px, py);
        let q = ux * ux * self.inv_sx2 + uy * uy * self.inv_sy2;
        (T::lit(-0.5) * q).exp()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RenderOptions {
    pub blend: BlendMode,
}

#[derive(Clone, Debug)]
struct TileRecord<T> {
    /// Indices into the global primitive arrays overlapping this tile's box.
    bin: Vec<u32>,
    /// CSR offsets per tile pixel (row-major within the tile) into `entries`.
    offsets: Vec<u32>,
    /// `(slot in bin, G)` for every contributing primitive, in compositing order.
    entries: Vec<(u32, T)>,
}

/// Rendered image plus the per-pixel record needed by [`backward`].
#[derive(Clone, Debug)]
pub struct RenderOutput<T = f32> {
    pub height: usize,
    pub width: usize,
    /// Clamped RGB, row-major.
    pub pixels: Vec<T>,
    /// Pre-clamp RGB.
    raw: Vec<T>,
    tiles_x: usize,
    tiles: Vec<TileRecord<T>>,
    prepared: Vec<Prepared<T>>,
    blend: BlendMode,
}

impl<T: Real> RenderOutput<T> {
    pub fn to_image(&self) -> ImageBuffer {
        let data = self.pixels.iter().map(|v| v.as_f64() as f32).collect();
        ImageBuffer::from_clamped(self.height, self.width, data).expect("render dimensions are positive")
    }

    /// Number of (pixel, primitive) pairs composited in the forward pass.
    pub fn pair_count(&self) -> usize {
        self.tiles.iter().map(|t| t.entries.len()).sum()
    }

    /// Transmittance sequence at a pixel, starting from 1.
    pub fn transmittance_trace(&self, row: usize, col: usize) -> Vec<T> {
        let (rec, local) = self.locate(row, col);
        let (a, b) = (rec.offsets[local] as usize, rec.offsets[local + 1] as usize);
        let mut t = T::one();
        let mut out = vec![t];
        for &(_, g) in &rec.entries[a..b] {
            if self.blend == BlendMode::AlphaBlend {
                t = t * (T::one() - g);
            }
            out.push(t);
        }
        out
    }

    /// Primitive indices composited at a pixel, in order.
    pub fn contributors(&self, row: usize, col: usize) -> Vec<usize> {
        let (rec, local) = self.locate(row, col);
        let (a, b) = (rec.offsets[local] as usize, rec.offsets[local + 1] as usize);
        rec.entries[a..b].iter().map(|&(s, _)| rec.bin[s as usize] as usize).collect()
    }

    fn locate(&self, row: usize, col: usize) -> (&TileRecord<T>, usize) {
        let (ty, tx) = (row / SCREEN_TILE, col / SCREEN_TILE);
        let rec = &self.tiles[ty * self.tiles_x + tx];
        let tw = SCREEN_TILE.min(self.width - tx * SCREEN_TILE);
        (rec, (row - ty * SCREEN_TILE) * tw + (col - tx * SCREEN_TILE))
    }
}

/// Parameter gradients, laid out like [`GaussianSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T = f32> {
    pub means: Vec<[T; 2]>,
    pub log_scales: Vec<[T; 2]>,
    pub thetas: Vec<T>,
    pub colors: Vec<[T; 3]>,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            means: vec![[T::zero(); 2]; n],
            log_scales: vec![[T::zero(); 2]; n],
            thetas: vec![T::zero(); n],
            colors: vec![[T::zero(); 3]; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.means.iter().flatten().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.thetas.iter().all(|v| v.is_finite())
            && self.colors.iter().flatten().all(|v| v.is_finite())
    }
}

/// Counters from a backward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BackwardStats {
    pub pairs_visited: usize,
}

/// Inclusive pixel index range whose centres lie within `[lo, hi]`.
#[inline]
fn pixel_span<T: Real>(lo: T, hi: T, extent: usize) -> Option<(usize, usize)> {
    let half = T::lit(0.5);
    let first = (lo - half).ceil().as_f64().max(0.0);
    let last = (hi - half).floor().as_f64().min(extent as f64 - 1.0);
    if !(first <= last) {
        return None;
    }
    Some((first as usize, last as usize))
}

pub fn render<T: Real>(set: &GaussianSet<T>, height: usize, width: usize) -> RenderOutput<T> {
    render_with(set, height, width, RenderOptions::default())
}

pub fn render_with<T: Real>(set: &GaussianSet<T>, height: usize, width: usize, opts: RenderOptions) -> RenderOutput<T> {
    assert!(height > 0 && width > 0, "canvas must be non-empty");
    let prepared: Vec<Prepared<T>> = (0..set.len()).into_par_iter().map(|i| Prepared::new(set, i)).collect();

    let tiles_x = width.div_ceil(SCREEN_TILE);
    let tiles_y = height.div_ceil(SCREEN_TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, p) in prepared.iter().enumerate() {
        let Some((c0, c1)) = pixel_span(p.mean[0] - p.radius, p.mean[0] + p.radius, width) else {
            continue;
        };
        let Some((r0, r1)) = pixel_span(p.mean[1] - p.radius, p.mean[1] + p.radius, height) else {
            continue;
        };
        for ty in r0 / SCREEN_TILE..=r1 / SCREEN_TILE {
            for tx in c0 / SCREEN_TILE..=c1 / SCREEN_TILE {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }

    let t_eps = T::lit(TRANSMITTANCE_EPS);
    let half = T::lit(0.5);
    let results: Vec<(TileRecord<T>, Vec<T>)> = bins
        .into_par_iter()
        .enumerate()
        .map(|(ti, bin)| {
            let (ty, tx) = (ti / tiles_x, ti % tiles_x);
            let (r0, c0) = (ty * SCREEN_TILE, tx * SCREEN_TILE);
            let (th, tw) = (SCREEN_TILE.min(height - r0), SCREEN_TILE.min(width - c0));
            let mut offsets = Vec::with_capacity(th * tw + 1);
            let mut entries = Vec::new();
            let mut raw = vec![T::zero(); th * tw * 3];
            let local: Vec<Prepared<T>> = bin.iter().map(|&gi| prepared[gi as usize]).collect();
            offsets.push(0u32);
            for lr in 0..th {
                let py = T::lit((r0 + lr) as f64) + half;
                for lc in 0..tw {
                    let px = T::lit((c0 + lc) as f64) + half;
                    let mut acc = [T::zero(); 3];
                    let mut t = T::one();
                    for (slot, p) in local.iter().enumerate() {
                        if !p.covers(px, py) {
                            continue;
                        }
                        if opts.blend == BlendMode::AlphaBlend && t < t_eps {
                            break;
                        }
                        let g = p.eval(px, py);
                        let w = match opts.blend {
                            BlendMode::AlphaBlend => g * t,
                            BlendMode::Accumulate => g,
                        };
                        for ch in 0..3 {
                            acc[ch] = acc[ch] + p.color[ch] * w;
                        }
                        if opts.blend == BlendMode::AlphaBlend {
                            t = t * (T::one() - g);
                        }
                        entries.push((slot as u32, g));
                    }
                    offsets.push(entries.len() as u32);
                    raw[(lr * tw + lc) * 3..(lr * tw + lc) * 3 + 3].copy_from_slice(&acc);
                }
            }
            (TileRecord { bin, offsets, entries }, raw)
        })
        .collect();

    let mut raw = vec![T::zero(); height * width * 3];
    let mut tiles = Vec::with_capacity(results.len());
    for (ti, (rec, tile_raw)) in results.into_iter().enumerate() {
        let (ty, tx) = (ti / tiles_x, ti % tiles_x);
        let (r0, c0) = (ty * SCREEN_TILE, tx * SCREEN_TILE);
        let tw = SCREEN_TILE.min(width - c0);
        for (lr, chunk) in tile_raw.chunks(tw * 3).enumerate() {
            let start = ((r0 + lr) * width + c0) * 3;
            raw[start..start + tw * 3].copy_from_slice(chunk);
        }
        tiles.push(rec);
    }
    let pixels = raw.iter().map(|v| v.max(T::zero()).min(T::one())).collect();
    RenderOutput {
        height,
        width,
        pixels,
        raw,
        tiles_x,
        tiles,
        prepared,
        blend: opts.blend,
    }
}

pub fn backward<T: Real>(set: &GaussianSet<T>, output: &RenderOutput<T>, d_image: &[T]) -> GradientSet<T> {
    backward_with_stats(set, output, d_image).0
}

/// Per-slot accumulator: d/d(mean x, mean y, log sx, log sy, theta, r, g, b).
type Accum<T> = [T; 8];

pub fn backward_with_stats<T: Real>(
    set: &GaussianSet<T>,
    output: &RenderOutput<T>,
    d_image: &[T],
) -> (GradientSet<T>, BackwardStats) {
    let (height, width) = (output.height, output.width);
    assert_eq!(d_image.len(), height * width * 3, "gradient image has the wrong size");
    assert_eq!(set.len(), output.prepared.len(), "render output belongs to a different set");
    let tiles_x = output.tiles_x;
    let half = T::lit(0.5);
    let two = T::lit(2.0);

    let partials: Vec<(Vec<Accum<T>>, usize)> = output
        .tiles
        .par_iter()
        .enumerate()
        .map(|(ti, rec)| {
            let mut acc = vec![[T::zero(); 8]; rec.bin.len()];
            let mut visited = 0usize;
            let (ty, tx) = (ti / tiles_x, ti % tiles_x);
            let (r0, c0) = (ty * SCREEN_TILE, tx * SCREEN_TILE);
            let tw = SCREEN_TILE.min(width - c0);
            let npix = rec.offsets.len() - 1;
            let mut trans: Vec<T> = Vec::new();
            let prims: Vec<Prepared<T>> = rec.bin.iter().map(|&gi| output.prepared[gi as usize]).collect();
            for local in 0..npix {
                let (a, b) = (rec.offsets[local] as usize, rec.offsets[local + 1] as usize);
                if a == b {
                    continue;
                }
                let (row, col) = (r0 + local / tw, c0 + local % tw);
                let pi = (row * width + col) * 3;
                // Pixel clamp: no gradient where the composite left [0, 1].
                let mut g = [T::zero(); 3];
                for ch in 0..3 {
                    let r = output.raw[pi + ch];
                    if r >= T::zero() && r <= T::one() {
                        g[ch] = d_image[pi + ch];
                    }
                }
                if g.iter().all(|v| v.is_zero()) {
                    visited += b - a;
                    continue;
                }
                let entries = &rec.entries[a..b];
                trans.clear();
                let mut t = T::one();
                for &(_, gv) in entries {
                    trans.push(t);
                    if output.blend == BlendMode::AlphaBlend {
                        t = t * (T::one() - gv);
                    }
                }
                let px = T::lit(col as f64) + half;
                let py = T::lit(row as f64) + half;
                // Weighted colour of everything behind entry k, seen from k.
                let mut behind = T::zero();
                for k in (0..entries.len()).rev() {
                    visited += 1;
                    let (slot, gv) = entries[k];
                    let p = &prims[slot as usize];
                    let cg = p.color[0] * g[0] + p.color[1] * g[1] + p.color[2] * g[2];
                    let (d_g, w) = match output.blend {
                        BlendMode::AlphaBlend => {
                            let tk = trans[k];
                            let d = tk * (cg - behind);
                            behind = cg * gv + (T::one() - gv) * behind;
                            (d, gv * tk)
                        }
                        BlendMode::Accumulate => (cg, gv),
                    };
                    let slot_acc = &mut acc[slot as usize];
                    for ch in 0..3 {
                        if p.color_live[ch] {
                            slot_acc[5 + ch] = slot_acc[5 + ch] + g[ch] * w;
                        }
                    }
                    if d_g.is_zero() {
                        continue;
                    }
                    // Recompute the rotated offset; G itself comes from the record.
                    let (ux, uy) = p.offset(px, py);
                    let d_q = T::lit(-0.5) * gv * d_g;
                    let ax = ux * p.inv_sx2;
                    let ay = uy * p.inv_sy2;
                    // dq/dd = 2 R (ax, ay); d = pixel - mean.
                    let dq_ddx = two * (p.cos * ax - p.sin * ay);
                    let dq_ddy = two * (p.sin * ax + p.cos * ay);
                    slot_acc[0] = slot_acc[0] - d_q * dq_ddx;
                    slot_acc[1] = slot_acc[1] - d_q * dq_ddy;
                    if !p.floored[0] {
                        slot_acc[2] = slot_acc[2] - d_q * two * ux * ax;
                    }
                    if !p.floored[1] {
                        slot_acc[3] = slot_acc[3] - d_q * two * uy * ay;
                    }
                    slot_acc[4] = slot_acc[4] + d_q * two * ux * uy * (p.inv_sx2 - p.inv_sy2);
                }
            }
            (acc, visited)
        })
        .collect();

    let mut grads = GradientSet::zeros(set.len());
    let mut stats = BackwardStats::default();
    for (rec, (acc, visited)) in output.tiles.iter().zip(partials) {
        stats.pairs_visited += visited;
        for (&gi, a) in rec.bin.iter().zip(acc) {
            let i = gi as usize;
            grads.means[i][0] = grads.means[i][0] + a[0];
            grads.means[i][1] = grads.means[i][1] + a[1];
            grads.log_scales[i][0] = grads.log_scales[i][0] + a[2];
            grads.log_scales[i][1] = grads.log_scales[i][1] + a[3];
            grads.thetas[i] = grads.thetas[i] + a[4];
            for ch in 0..3 {
                grads.colors[i][ch] = grads.colors[i][ch] + a[5 + ch];
            }
        }
    }
    (grads, stats)
}

/// Same primitives on a canvas scaled by `factor` (means and scales scale too).
pub fn rescale_set<T: Real>(set: &GaussianSet<T>, factor: f64) -> GaussianSet<T> {
    assert!(factor > 0.0, "scale factor must be positive");
    let f = T::lit(factor);
    let lf = T::lit(factor.ln());
    GaussianSet {
        means: set.means.iter().map(|m| [m[0] * f, m[1] * f]).collect(),
        log_scales: set.log_scales.iter().map(|s| [s[0] + lf, s[1] + lf]).collect(),
        thetas: set.thetas.clone(),
        colors: set.colors.clone(),
    }
}

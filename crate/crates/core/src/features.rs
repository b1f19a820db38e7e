//! Adaptive tiling and per-tile saliency features (gradient magnitude and
//! local color variance) that drive variational sampling.

use rayon::prelude::*;

use crate::model::ImageBuffer;

/// Stabilizer added to the per-tile maxima before normalizing.
pub const NORMALIZE_EPS: f64 = 1e-8;

/// Axis-aligned pixel rectangle `[row, row + height) x [col, col + width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Tile {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.height && col >= self.col && col < self.col + self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TilePlan {
    pub tile_size: usize,
    pub n_h: usize,
    pub n_w: usize,
    /// Tiles in row-major order `(i, j) -> i * n_w + j`.
    pub tiles: Vec<Tile>,
    pub quotas_vs: Vec<usize>,
    pub quotas_us: Vec<usize>,
}

impl TilePlan {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }
}

/// Tile origins along one axis of length `extent`.
fn axis_origins(extent: usize, tile: usize) -> (usize, Vec<usize>) {
    let n = extent.div_ceil(tile).max(1);
    if n == 1 {
        // Centred placement, clamped to the image.
        return (1, vec![extent.saturating_sub(tile) / 2]);
    }
    // floor(i * span / (n - 1)) in integers: a float stride can land the last
    // origin one pixel short of the boundary.
    let span = extent - tile;
    let origins = (0..n).map(|i| (i * span / (n - 1)).min(span)).collect();
    (n, origins)
}

/// Splits `total` samples over `tiles` tiles: an even share each, with the
/// remainder going one apiece to the lowest row-major indices.
pub fn allocate(total: usize, tiles: usize) -> Vec<usize> {
    assert!(tiles > 0, "cannot allocate over zero tiles");
    let base = total / tiles;
    let extra = total % tiles;
    (0..tiles).map(|k| base + usize::from(k < extra)).collect()
}

pub fn plan_tiles(height: usize, width: usize, tile_size: usize, n_vs: usize, n_us: usize) -> TilePlan {
    assert!(height > 0 && width > 0 && tile_size > 0, "plan_tiles needs positive dimensions");
    let (n_h, rows) = axis_origins(height, tile_size);
    let (n_w, cols) = axis_origins(width, tile_size);
    let mut tiles = Vec::with_capacity(n_h * n_w);
    for &row in &rows {
        for &col in &cols {
            tiles.push(Tile {
                row,
                col,
                height: tile_size.min(height - row),
                width: tile_size.min(width - col),
            });
        }
    }
    TilePlan {
        tile_size,
        n_h,
        n_w,
        quotas_vs: allocate(n_vs, tiles.len()),
        quotas_us: allocate(n_us, tiles.len()),
        tiles,
    }
}

/// Single-channel map over a tile, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Channel-mean of the per-channel spatial gradient norm. Central differences
/// inside, one-sided differences on the border, zero along any axis of length 1.
pub fn gradient_magnitude(tile: &ImageBuffer) -> FeatureMap {
    let (h, w) = tile.dims();
    let mut out = FeatureMap::zeros(h, w);
    let diff = |lo: f32, hi: f32, span: usize| (hi - lo) as f64 / span as f64;
    for r in 0..h {
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let (r0, r1) = (r.saturating_sub(1), (r + 1).min(h - 1));
            let mut acc = 0.0;
            for ch in 0..3 {
                let gx = if c1 > c0 {
                    diff(tile.get(r, c0, ch), tile.get(r, c1, ch), c1 - c0)
                } else {
                    0.0
                };
                let gy = if r1 > r0 {
                    diff(tile.get(r0, c, ch), tile.get(r1, c, ch), r1 - r0)
                } else {
                    0.0
                };
                acc += (gx * gx + gy * gy).sqrt();
            }
            out.values[r * w + c] = acc / 3.0;
        }
    }
    out
}

/// Channel-mean population variance over a `window x window` neighbourhood,
/// truncated at the tile border.
pub fn color_variance(tile: &ImageBuffer, window: usize) -> FeatureMap {
    assert!(window % 2 == 1, "variance window must be odd");
    let (h, w) = tile.dims();
    let half = window / 2;
    let mut out = FeatureMap::zeros(h, w);
    if window == 1 {
        return out;
    }
    // Summed-area tables of x and x^2 per channel, (h+1) x (w+1). Values are
    // shifted by the first pixel so flat regions cancel exactly.
    let shift = tile.pixel(0, 0).map(f64::from);
    let stride = w + 1;
    let mut sums = vec![[0.0f64; 3]; (h + 1) * stride];
    let mut sq = vec![[0.0f64; 3]; (h + 1) * stride];
    for r in 0..h {
        for c in 0..w {
            let i = (r + 1) * stride + c + 1;
            for ch in 0..3 {
                let v = tile.get(r, c, ch) as f64 - shift[ch];
                sums[i][ch] = v + sums[i - 1][ch] + sums[i - stride][ch] - sums[i - stride - 1][ch];
                sq[i][ch] = v * v + sq[i - 1][ch] + sq[i - stride][ch] - sq[i - stride - 1][ch];
            }
        }
    }
    let rect = |t: &[[f64; 3]], r0: usize, c0: usize, r1: usize, c1: usize, ch: usize| {
        t[r1 * stride + c1][ch] - t[r0 * stride + c1][ch] - t[r1 * stride + c0][ch] + t[r0 * stride + c0][ch]
    };
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(half), (r + half + 1).min(h));
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(half), (c + half + 1).min(w));
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            let mut acc = 0.0;
            for ch in 0..3 {
                let mean = rect(&sums, r0, c0, r1, c1, ch) / n;
                let var = rect(&sq, r0, c0, r1, c1, ch) / n - mean * mean;
                acc += var.max(0.0);
            }
            out.values[r * w + c] = acc / 3.0;
        }
    }
    out
}

/// Normalized saliency maps and the combined sampling weight for one tile.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub var_norm: Vec<f64>,
}

impl WeightMap {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.width + col]
    }
}

pub fn sampling_weights(grad: &FeatureMap, var: &FeatureMap, lambda_m: f64, epsilon: f64) -> WeightMap {
    assert_eq!((grad.height, grad.width), (var.height, var.width), "feature maps differ in shape");
    let gmax = grad.max() + epsilon;
    let vmax = var.max() + epsilon;
    let grad_norm: Vec<f64> = grad.values.iter().map(|m| m / gmax).collect();
    let var_norm: Vec<f64> = var.values.iter().map(|v| v / vmax).collect();
    let weights = grad_norm
        .iter()
        .zip(&var_norm)
        .map(|(m, v)| lambda_m * m + (1.0 - lambda_m) * v)
        .collect();
    WeightMap {
        height: grad.height,
        width: grad.width,
        weights,
        grad_norm,
        var_norm,
    }
}

/// Weight maps for every tile of `plan`, in tile order.
pub fn tile_weight_maps(image: &ImageBuffer, plan: &TilePlan, lambda_m: f64, window: usize) -> Vec<WeightMap> {
    plan.tiles
        .par_iter()
        .map(|t| {
            let crop = image.crop(t.row, t.col, t.height, t.width);
            let m = gradient_magnitude(&crop);
            let v = color_variance(&crop, window);
            sampling_weights(&m, &v, lambda_m, NORMALIZE_EPS)
        })
        .collect()
}

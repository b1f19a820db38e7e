//! Feature-guided initialization of the primitive set.
//!
//! 1. Per tile, pixels are drawn with probability proportional to the
//!    saliency weight, and each draw gets an isotropic scale
//!    `s_base * exp(-w / 2)`: salient pixels get small primitives.
//! 2. The rest of the budget is placed uniformly, rejecting candidates closer
//!    than the exclusion radius to anything already placed. These points take
//!    the RMS distance to their `k` nearest neighbours as scale.
//! 3. Every point takes the Gaussian-weighted median colour of the disk of
//!    radius equal to its scale.
//!
//! Random draws come from per-purpose ChaCha streams keyed by the seed, so the
//! result is the same whatever the thread count.

mod color;
mod grid;

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use color::{weighted_median, weighted_median_color};
pub use grid::SpatialGrid;

use crate::error::{Error, Result};
use crate::features::{plan_tiles, tile_weight_maps, Tile, TilePlan, WeightMap};
use crate::model::{Budget, EncoderConfig, GaussianSet, ImageBuffer};

/// Rejection attempts per uniform sample before falling back.
pub const MAX_EXCLUSION_ATTEMPTS: usize = 30;

const STREAM_VARIATIONAL: u64 = 0;
const STREAM_UNIFORM: u64 = 1 << 32;
const STREAM_THETA: u64 = 2 << 32;
const STREAM_RANDOM_POS: u64 = 3 << 32;
const STREAM_RANDOM_SCALE: u64 = 4 << 32;
const STREAM_RANDOM_COLOR: u64 = 5 << 32;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleOrigin {
    Variational,
    /// `degraded` marks points accepted after the rejection budget ran out;
    /// they may violate the exclusion radius.
    Uniform { degraded: bool },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint {
    /// `(x, y)` in pixels.
    pub position: [f64; 2],
    /// Sampling weight; zero for uniform points.
    pub weight: f64,
    /// Isotropic scale in pixels.
    pub scale: f64,
    pub origin: SampleOrigin,
}

/// Draws `quota` pixels (with replacement) with probability proportional to
/// the tile weights, in tile-local coordinates at pixel centres. An all-zero
/// map samples uniformly.
pub fn variational_sample_tile(weights: &WeightMap, quota: usize, s_base: f64, rng: &mut impl Rng) -> Vec<SamplePoint> {
    if quota == 0 {
        return Vec::new();
    }
    let mut cumulative = Vec::with_capacity(weights.weights.len());
    let mut total = 0.0;
    for &w in &weights.weights {
        total += w.max(0.0);
        cumulative.push(total);
    }
    let n = weights.weights.len();
    (0..quota)
        .map(|_| {
            let idx = if total > 0.0 {
                let u = rng.gen::<f64>() * total;
                // First index whose cumulative weight exceeds u; zero-weight pixels are never hit.
                cumulative.partition_point(|&c| c <= u).min(n - 1)
            } else {
                rng.gen_range(0..n)
            };
            let (row, col) = (idx / weights.width, idx % weights.width);
            let w = weights.weights[idx];
            SamplePoint {
                position: [col as f64 + 0.5, row as f64 + 0.5],
                weight: w,
                scale: s_base * (-0.5 * w).exp(),
                origin: SampleOrigin::Variational,
            }
        })
        .collect()
}

/// Shifts tile-local points by the tile's `(row, col)` origin.
pub fn to_global(points: &[SamplePoint], tile_origin: (usize, usize)) -> Vec<SamplePoint> {
    let (row, col) = tile_origin;
    points
        .iter()
        .map(|p| SamplePoint {
            position: [p.position[0] + col as f64, p.position[1] + row as f64],
            ..*p
        })
        .collect()
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

/// `max(s_base, median of the variational scales)`.
pub fn exclusion_radius(s_base: f64, variational_scales: &[f64]) -> f64 {
    let mut v = variational_scales.to_vec();
    median(&mut v).map_or(s_base, |m| m.max(s_base))
}

/// Rejection sampler enforcing a minimum spacing against everything placed so far.
#[derive(Clone, Debug)]
pub struct ExclusionSampler {
    grid: SpatialGrid,
    r_excl: f64,
    max_attempts: usize,
}

impl ExclusionSampler {
    pub fn new(existing: &[SamplePoint], r_excl: f64, max_attempts: usize) -> Self {
        assert!(r_excl > 0.0, "exclusion radius must be positive");
        let mut grid = SpatialGrid::new(r_excl);
        for p in existing {
            grid.insert(p.position);
        }
        Self {
            grid,
            r_excl,
            max_attempts: max_attempts.max(1),
        }
    }

    /// Places exactly `quota` points in `region`. A candidate is accepted once
    /// it is at least `r_excl` from every placed point; after `max_attempts`
    /// failures the candidate with the largest clearance is taken instead and
    /// flagged as degraded.
    pub fn sample(&mut self, quota: usize, region: Tile, rng: &mut impl Rng) -> Vec<SamplePoint> {
        let mut out = Vec::with_capacity(quota);
        let (x0, y0) = (region.col as f64, region.row as f64);
        let (w, h) = (region.width as f64, region.height as f64);
        for _ in 0..quota {
            let mut fallback = ([x0, y0], -1.0);
            let mut accepted = None;
            for _ in 0..self.max_attempts {
                let cand = [x0 + rng.gen::<f64>() * w, y0 + rng.gen::<f64>() * h];
                match self.grid.nearest_within_cell(cand) {
                    Some(d) if d < self.r_excl => {
                        if d > fallback.1 {
                            fallback = (cand, d);
                        }
                    }
                    _ => {
                        accepted = Some(cand);
                        break;
                    }
                }
            }
            let (position, degraded) = match accepted {
                Some(p) => (p, false),
                None => (fallback.0, true),
            };
            self.grid.insert(position);
            out.push(SamplePoint {
                position,
                weight: 0.0,
                scale: 0.0,
                origin: SampleOrigin::Uniform { degraded },
            });
        }
        out
    }
}

/// Uniform points over the `height x width` canvas honouring the exclusion
/// radius against `existing` and each other.
pub fn uniform_sample_excluded(
    existing: &[SamplePoint],
    quota: usize,
    r_excl: f64,
    bounds: (usize, usize),
    rng: &mut impl Rng,
    max_attempts: usize,
) -> Vec<SamplePoint> {
    let region = Tile {
        row: 0,
        col: 0,
        height: bounds.0,
        width: bounds.1,
    };
    ExclusionSampler::new(existing, r_excl, max_attempts).sample(quota, region, rng)
}

/// RMS distance from each queried point to its `k` nearest other points of
/// `reference`. Queries are indices into `reference`; a point never counts as
/// its own neighbour.
pub fn knn_scales(reference: &[[f64; 2]], queries: &[usize], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if reference.len() <= k {
        return Err(Error::InsufficientPoints {
            points: reference.len(),
            k,
        });
    }
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    for p in reference {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let area = ((hi[0] - lo[0]) * (hi[1] - lo[1])).max(1e-12);
    let cell = (area * k as f64 / reference.len() as f64).sqrt().max(1e-6);
    let grid = SpatialGrid::from_points(cell, reference);
    Ok(queries
        .par_iter()
        .map(|&q| {
            let d2 = grid.knn_sq_excluding(q, k);
            (d2.iter().sum::<f64>() / k as f64).sqrt()
        })
        .collect())
}

/// How each attribute group is initialized; the all-`false` strategy is the
/// fully random baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InitStrategy {
    pub smart_positions: bool,
    pub smart_scales: bool,
    pub smart_colors: bool,
}

impl InitStrategy {
    pub const FULL: Self = Self {
        smart_positions: true,
        smart_scales: true,
        smart_colors: true,
    };
    pub const RANDOM: Self = Self {
        smart_positions: false,
        smart_scales: false,
        smart_colors: false,
    };
}

impl Default for InitStrategy {
    fn default() -> Self {
        Self::FULL
    }
}

/// Everything produced during initialization; `set` is what training consumes.
#[derive(Clone, Debug)]
pub struct Initialization {
    pub set: GaussianSet<f32>,
    /// Sample points in primitive order (empty for random positions).
    pub samples: Vec<SamplePoint>,
    pub plan: TilePlan,
    pub weight_maps: Vec<WeightMap>,
    pub r_excl: f64,
}

pub fn initialize(image: &ImageBuffer, budget: &Budget, config: &EncoderConfig) -> Result<Initialization> {
    initialize_with(image, budget, config, InitStrategy::FULL)
}

pub fn initialize_with(
    image: &ImageBuffer,
    budget: &Budget,
    config: &EncoderConfig,
    strategy: InitStrategy,
) -> Result<Initialization> {
    config.validate()?;
    let (h, w) = image.dims();
    if budget.n_g == 0 || budget.n_vs + budget.n_us != budget.n_g {
        return Err(Error::InvalidArgument(format!("inconsistent budget {budget:?}")));
    }
    let seed = config.seed;
    let plan = plan_tiles(h, w, config.tile_size, budget.n_vs, budget.n_us);

    let (samples, weight_maps, r_excl) = if strategy.smart_positions {
        let maps = tile_weight_maps(image, &plan, config.lambda_m, config.variance_window);
        let per_tile: Vec<Vec<SamplePoint>> = plan
            .tiles
            .par_iter()
            .zip(&maps)
            .zip(&plan.quotas_vs)
            .enumerate()
            .map(|(k, ((tile, map), &quota))| {
                let mut rng = stream_rng(seed, STREAM_VARIATIONAL + k as u64);
                let local = variational_sample_tile(map, quota, budget.s_base, &mut rng);
                to_global(&local, (tile.row, tile.col))
            })
            .collect();
        let mut samples: Vec<SamplePoint> = per_tile.into_iter().flatten().collect();
        let scales: Vec<f64> = samples.iter().map(|s| s.scale).collect();
        let r_excl = exclusion_radius(budget.s_base, &scales);

        let mut sampler = ExclusionSampler::new(&samples, r_excl, MAX_EXCLUSION_ATTEMPTS);
        for (k, (tile, &quota)) in plan.tiles.iter().zip(&plan.quotas_us).enumerate() {
            let mut rng = stream_rng(seed, STREAM_UNIFORM + k as u64);
            samples.extend(sampler.sample(quota, *tile, &mut rng));
        }

        let first_uniform = budget.n_vs;
        if first_uniform < samples.len() {
            let positions: Vec<[f64; 2]> = samples.iter().map(|s| s.position).collect();
            let queries: Vec<usize> = (first_uniform..samples.len()).collect();
            let scales = if positions.len() > 1 {
                let k = config.k_neighbors.min(positions.len() - 1);
                knn_scales(&positions, &queries, k)?
            } else {
                vec![budget.s_base]
            };
            for (s, scale) in samples[first_uniform..].iter_mut().zip(scales) {
                // Coincident points would give a zero scale.
                s.scale = if scale > 0.0 { scale } else { budget.s_base };
            }
        }
        (samples, maps, r_excl)
    } else {
        let mut rng = stream_rng(seed, STREAM_RANDOM_POS);
        let samples = (0..budget.n_g)
            .map(|_| SamplePoint {
                position: [rng.gen::<f64>() * w as f64, rng.gen::<f64>() * h as f64],
                weight: 0.0,
                scale: budget.s_base,
                origin: SampleOrigin::Uniform { degraded: false },
            })
            .collect();
        (samples, Vec::new(), budget.s_base)
    };
    debug_assert_eq!(samples.len(), budget.n_g);

    // Random scales: independent per axis, uniform in [0.5, 1.5] * s_base.
    let log_scales: Vec<[f64; 2]> = if strategy.smart_scales && strategy.smart_positions {
        samples.iter().map(|s| [s.scale.ln(); 2]).collect()
    } else {
        let mut rng = stream_rng(seed, STREAM_RANDOM_SCALE);
        samples
            .iter()
            .map(|_| {
                let sx = budget.s_base * rng.gen_range(0.5..=1.5);
                let sy = budget.s_base * rng.gen_range(0.5..=1.5);
                [sx.ln(), sy.ln()]
            })
            .collect()
    };

    let colors: Vec<[f32; 3]> = if strategy.smart_colors {
        samples
            .par_iter()
            .zip(&log_scales)
            .map(|(s, ls)| weighted_median_color(image, s.position, ls[0].exp().max(ls[1].exp())))
            .collect()
    } else {
        let mut rng = stream_rng(seed, STREAM_RANDOM_COLOR);
        samples.iter().map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
    };

    let mut theta_rng = stream_rng(seed, STREAM_THETA);
    let mut set = GaussianSet::with_capacity(samples.len());
    for ((s, ls), c) in samples.iter().zip(&log_scales).zip(colors) {
        let theta = theta_rng.gen::<f64>() * TAU;
        set.push(
            [s.position[0] as f32, s.position[1] as f32],
            [ls[0] as f32, ls[1] as f32],
            theta as f32,
            c,
        );
    }
    let samples = if strategy.smart_positions { samples } else { Vec::new() };
    Ok(Initialization {
        set,
        samples,
        plan,
        weight_maps,
        r_excl,
    })
}

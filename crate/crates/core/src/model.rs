//! Shared domain types: pixel buffers, primitive sets, the primitive budget
//! and encoder configuration.

use std::f64::consts::PI;
use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};

/// Bytes charged per primitive when turning a compression ratio into a
/// primitive count. Kept at the vector-quantized figure so primitive counts
/// line up with published budgets, even though our own files spend more.
pub const BYTES_PER_PRIMITIVE: f64 = 7.0;

/// Floating-point type usable for primitive parameters.
///
/// Training runs in `f32`; gradient checks instantiate everything in `f64`.
pub trait Real: Float + Debug + Default + Send + Sync + 'static {
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major RGB image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples for a {height}x{width} RGB image, got {}",
                height * width * Self::CHANNELS,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from `f(row, col) -> rgb`, clamping to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                for v in f(r, c) {
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(height, width, |_, _| rgb)
    }

    /// Clamps every sample into `[0, 1]` (NaN maps to 0).
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        Self::CHANNELS
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * 3 + channel]
    }

    /// Copies out the rectangle `[row, row + h) x [col, col + w)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> ImageBuffer {
        assert!(row + h <= self.height && col + w <= self.width, "crop out of bounds");
        let mut data = Vec::with_capacity(h * w * 3);
        for r in row..row + h {
            let start = (r * self.width + col) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        ImageBuffer {
            height: h,
            width: w,
            data,
        }
    }

    pub fn ensure_same_shape(&self, other: &ImageBuffer) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }
}

/// Structure-of-arrays set of 2D Gaussian primitives.
///
/// Means are continuous pixel coordinates `(x, y)` with pixel `(row, col)`
/// centred at `(col + 0.5, row + 0.5)`. Scales live in log space so they stay
/// positive under unconstrained updates. Colors are unconstrained here and
/// clamped to `[0, 1]` by the renderer. Opacity is the constant 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianSet<T = f32> {
    pub means: Vec<[T; 2]>,
    pub log_scales: Vec<[T; 2]>,
    pub thetas: Vec<T>,
    pub colors: Vec<[T; 3]>,
}

impl<T: Real> GaussianSet<T> {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            means: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            thetas: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, mean: [T; 2], log_scale: [T; 2], theta: T, color: [T; 3]) {
        self.means.push(mean);
        self.log_scales.push(log_scale);
        self.thetas.push(theta);
        self.colors.push(color);
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.means.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// True when all parameter arrays agree in length and hold finite values.
    pub fn is_consistent(&self) -> bool {
        let n = self.means.len();
        self.log_scales.len() == n
            && self.thetas.len() == n
            && self.colors.len() == n
            && self.means.iter().flatten().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.thetas.iter().all(|v| v.is_finite())
            && self.colors.iter().flatten().all(|v| v.is_finite())
    }

    /// Converts every parameter to another float type.
    pub fn cast<U: Real>(&self) -> GaussianSet<U> {
        let c2 = |a: &[T; 2]| [U::lit(a[0].as_f64()), U::lit(a[1].as_f64())];
        GaussianSet {
            means: self.means.iter().map(c2).collect(),
            log_scales: self.log_scales.iter().map(c2).collect(),
            thetas: self.thetas.iter().map(|t| U::lit(t.as_f64())).collect(),
            colors: self
                .colors
                .iter()
                .map(|c| c.map(|v| U::lit(v.as_f64())))
                .collect(),
        }
    }
}

/// Primitive budget derived from image size and target compression ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Budget {
    pub cr: f64,
    pub n_g: usize,
    pub n_vs: usize,
    pub n_us: usize,
    pub s_base: f64,
}

/// Largest compression ratio that still affords one primitive.
pub fn max_feasible_ratio(height: usize, width: usize) -> f64 {
    3.0 * height as f64 * width as f64 / BYTES_PER_PRIMITIVE
}

/// `floor(3HW / (7 cr))`, corrected for rounding in the float division.
fn primitive_count(height: usize, width: usize, cr: f64) -> usize {
    let raw = 3.0 * height as f64 * width as f64;
    let per = BYTES_PER_PRIMITIVE * cr;
    let mut n = (raw / per).floor().max(0.0) as usize;
    while n > 0 && n as f64 * per > raw {
        n -= 1;
    }
    while (n + 1) as f64 * per <= raw {
        n += 1;
    }
    n
}

/// Base scale: a third of the radius of `n_g` equal-area disks tiling the canvas.
pub fn base_scale(height: usize, width: usize, n_g: usize) -> f64 {
    (height as f64 * width as f64 / (PI * n_g as f64)).sqrt() / 3.0
}

pub fn compute_budget(height: usize, width: usize, cr: f64, lambda_g: f64) -> Result<Budget> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "image dimensions must be positive, got {height}x{width}"
        )));
    }
    if !(cr > 0.0) || !cr.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "compression ratio must be positive and finite, got {cr}"
        )));
    }
    if !(0.0..=1.0).contains(&lambda_g) {
        return Err(Error::InvalidArgument(format!(
            "lambda_g must lie in [0, 1], got {lambda_g}"
        )));
    }
    let n_g = primitive_count(height, width, cr);
    if n_g < 1 {
        return Err(Error::BudgetTooSmall {
            height,
            width,
            cr,
            max_cr: max_feasible_ratio(height, width),
        });
    }
    let n_vs = ((lambda_g * n_g as f64).floor() as usize).min(n_g);
    Ok(Budget {
        cr,
        n_g,
        n_vs,
        n_us: n_g - n_vs,
        s_base: base_scale(height, width, n_g),
    })
}

/// 3-sigma influence radius of a primitive, ignoring rotation.
#[inline]
pub fn influence_radius<T: Real>(s_x: T, s_y: T) -> T {
    T::lit(3.0) * s_x.max(s_y)
}

/// Per-group Adam learning rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    /// Applied in image-normalized coordinates (pixels / max(H, W)).
    pub means: f64,
    /// Applied to log-scales.
    pub scales: f64,
    pub colors: f64,
    pub thetas: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            means: 1e-4,
            scales: 5e-3,
            colors: 5e-2,
            thetas: 1e-3,
        }
    }
}

/// How overlapping primitives are combined at a pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BlendMode {
    /// Front-to-back alpha compositing in index order with opacity 1.
    #[default]
    AlphaBlend,
    /// Order-free weighted sum of colors.
    Accumulate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Gradient-magnitude weight in the sampling weight (variance gets the rest).
    pub lambda_m: f64,
    /// Fraction of the budget placed by variational sampling.
    pub lambda_g: f64,
    /// L1 weight in the training loss (SSIM gets the rest).
    pub lambda_l: f64,
    pub k_neighbors: usize,
    pub tile_size: usize,
    /// Side of the square color-variance window; odd.
    pub variance_window: usize,
    pub iterations: usize,
    pub learning_rates: LearningRates,
    pub blend: BlendMode,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            lambda_m: 0.9,
            lambda_g: 0.7,
            lambda_l: 0.9,
            k_neighbors: 3,
            tile_size: 1024,
            variance_window: 5,
            iterations: 10_000,
            learning_rates: LearningRates::default(),
            blend: BlendMode::AlphaBlend,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("lambda_m", self.lambda_m)?;
        unit("lambda_g", self.lambda_g)?;
        unit("lambda_l", self.lambda_l)?;
        if self.k_neighbors == 0 {
            return Err(Error::InvalidArgument("k_neighbors must be at least 1".into()));
        }
        if self.tile_size == 0 {
            return Err(Error::InvalidArgument("tile_size must be at least 1".into()));
        }
        if self.variance_window == 0 || self.variance_window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "variance_window must be odd and positive, got {}",
                self.variance_window
            )));
        }
        let lr = &self.learning_rates;
        for (name, v) in [
            ("means", lr.means),
            ("scales", lr.scales),
            ("colors", lr.colors),
            ("thetas", lr.thetas),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "learning rate for {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

//! End-to-end encode and decode built from the individual stages.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::init::{initialize_with, InitStrategy, Initialization};
use crate::model::{compute_budget, Budget, EncoderConfig, GaussianSet, ImageBuffer};
use crate::render::{render_with, rescale_set, RenderOptions};
use crate::train::{train_with, Progress, TrainState};

/// Initialization variants compared in the ablation study, from fully random
/// to fully feature-guided. Each one switches on one more attribute group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationVariant {
    Random,
    Means,
    Scales,
    Full,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [Self::Random, Self::Means, Self::Scales, Self::Full];

    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Means => "means",
            Self::Scales => "scales",
            Self::Full => "full",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn strategy(self) -> InitStrategy {
        InitStrategy {
            smart_positions: self != Self::Random,
            smart_scales: matches!(self, Self::Scales | Self::Full),
            smart_colors: self == Self::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimings {
    pub initialize: Duration,
    pub train: Duration,
}

#[derive(Clone, Debug)]
pub struct EncodeOutcome {
    pub budget: Budget,
    pub init: Initialization,
    pub set: GaussianSet<f32>,
    pub state: TrainState,
    pub timings: PhaseTimings,
}

/// Budget, initialize and train.
pub fn encode_image(
    image: &ImageBuffer,
    cr: f64,
    config: &EncoderConfig,
    strategy: InitStrategy,
    on_step: impl FnMut(&Progress),
) -> Result<EncodeOutcome> {
    config.validate()?;
    let (h, w) = image.dims();
    let budget = compute_budget(h, w, cr, config.lambda_g)?;
    let t0 = Instant::now();
    let init = initialize_with(image, &budget, config, strategy)?;
    let t1 = Instant::now();
    let (set, state) = train_with(image, init.set.clone(), config, on_step)?;
    let timings = PhaseTimings {
        initialize: t1 - t0,
        train: t1.elapsed(),
    };
    Ok(EncodeOutcome {
        budget,
        init,
        set,
        state,
        timings,
    })
}

/// Output canvas size for a decode at `scale` times the stored resolution.
pub fn scaled_dims(height: usize, width: usize, scale: f64) -> Result<(usize, usize)> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let h = (height as f64 * scale).round() as usize;
    let w = (width as f64 * scale).round() as usize;
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("scale {scale} yields an empty canvas")));
    }
    Ok((h, w))
}

/// Rasterizes a stored set at `scale` times its native resolution.
pub fn decode_render(set: &GaussianSet<f32>, height: usize, width: usize, scale: f64, opts: RenderOptions) -> Result<ImageBuffer> {
    let (h, w) = scaled_dims(height, width, scale)?;
    let out = if scale == 1.0 {
        render_with(set, h, w, opts)
    } else {
        render_with(&rescale_set(set, scale), h, w, opts)
    };
    Ok(out.to_image())
}

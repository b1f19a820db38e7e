//! Gradient-descent refinement of a primitive set against a target image.

use std::f32::consts::TAU;

use crate::error::{Error, Result};
use crate::metrics::{psnr_from_mse, SsimReference, SSIM_WINDOW};
use crate::model::{EncoderConfig, GaussianSet, ImageBuffer, LearningRates};
use crate::render::{backward, render_with, GradientSet, RenderOptions};

/// PSNR is recorded every this many steps (and after the last one).
pub const PSNR_INTERVAL: usize = 100;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Value and pixel gradient of the training objective.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    pub l1: f64,
    /// `None` when the SSIM term has zero weight.
    pub ssim: Option<f64>,
    pub mse: f64,
    /// d loss / d rendered pixel, interleaved RGB.
    pub grad: Vec<f64>,
}

/// `lambda_l * L1 + (1 - lambda_l) * (1 - SSIM)` over interleaved RGB in
/// `[0, 1]`. The L1 subgradient at zero residual is zero.
pub fn composite_loss(rendered: &[f64], target: &[f64], height: usize, width: usize, lambda_l: f64) -> Result<LossEval> {
    CompositeLoss::new(target, height, width, lambda_l)?.eval(rendered)
}

/// The training objective against a fixed target, with the target's SSIM
/// statistics computed once.
pub struct CompositeLoss<'a> {
    target: &'a [f64],
    height: usize,
    width: usize,
    lambda_l: f64,
    ssim: Option<SsimReference>,
}

impl<'a> CompositeLoss<'a> {
    pub fn new(target: &'a [f64], height: usize, width: usize, lambda_l: f64) -> Result<Self> {
        if target.len() != height * width * 3 {
            return Err(Error::ShapeMismatch {
                left: (height, width),
                right: (target.len(), 1),
            });
        }
        if !(0.0..=1.0).contains(&lambda_l) {
            return Err(Error::InvalidArgument(format!("lambda_l must lie in [0, 1], got {lambda_l}")));
        }
        let ssim = if lambda_l < 1.0 {
            if height < SSIM_WINDOW || width < SSIM_WINDOW {
                return Err(Error::ImageTooSmall {
                    height,
                    width,
                    min: SSIM_WINDOW,
                });
            }
            Some(SsimReference::new(target, height, width))
        } else {
            None
        };
        Ok(Self {
            target,
            height,
            width,
            lambda_l,
            ssim,
        })
    }

    pub fn eval(&self, rendered: &[f64]) -> Result<LossEval> {
        let n = self.height * self.width * 3;
        if rendered.len() != n {
            return Err(Error::ShapeMismatch {
                left: (self.height, self.width),
                right: (rendered.len(), 1),
            });
        }
        let lambda_l = self.lambda_l;
        let inv_n = 1.0 / n as f64;
        let mut l1 = 0.0;
        let mut sq = 0.0;
        let mut grad = Vec::with_capacity(n);
        for (&x, &y) in rendered.iter().zip(self.target) {
            let d = x - y;
            l1 += d.abs();
            sq += d * d;
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad.push(lambda_l * sign * inv_n);
        }
        l1 *= inv_n;
        let mut loss = lambda_l * l1;
        let ssim = self.ssim.as_ref().map(|reference| {
            let (s, ds) = reference.value_and_grad(rendered);
            let w = 1.0 - lambda_l;
            loss += w * (1.0 - s);
            for (g, d) in grad.iter_mut().zip(ds) {
                *g -= w * d;
            }
            s
        });
        Ok(LossEval {
            loss,
            l1,
            ssim,
            mse: sq * inv_n,
            grad,
        })
    }
}

/// First and second moment estimates for one parameter group, flattened.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Adam step on `params` given `grads`, both flattened in the same order.
    /// `t` is the 1-based step count and `unit` converts a step in optimizer
    /// coordinates back to parameter units.
    fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64, t: usize, unit: f64) {
        let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            let g = g as f64 * unit;
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let update = lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
            *p = (*p as f64 - update * unit) as f32;
        }
    }
}

/// Adam over the four parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub rates: LearningRates,
    /// Means are optimized in coordinates divided by this length.
    pub position_unit: f64,
    pub step: usize,
    pub means: Moments,
    pub log_scales: Moments,
    pub thetas: Moments,
    pub colors: Moments,
}

impl Adam {
    pub fn new(n: usize, rates: LearningRates, position_unit: f64) -> Self {
        Self {
            rates,
            position_unit,
            step: 0,
            means: Moments::zeros(2 * n),
            log_scales: Moments::zeros(2 * n),
            thetas: Moments::zeros(n),
            colors: Moments::zeros(3 * n),
        }
    }

    /// Applies one update. Colours are projected back onto `[0, 1]` and angles
    /// wrapped into `[0, 2pi)`.
    pub fn update(&mut self, set: &mut GaussianSet<f32>, grads: &GradientSet<f32>) {
        self.step += 1;
        let t = self.step;
        let r = self.rates;
        self.means.step(
            set.means.as_flattened_mut(),
            grads.means.as_flattened(),
            r.means,
            t,
            self.position_unit,
        );
        self.log_scales
            .step(set.log_scales.as_flattened_mut(), grads.log_scales.as_flattened(), r.scales, t, 1.0);
        self.thetas.step(&mut set.thetas, &grads.thetas, r.thetas, t, 1.0);
        self.colors
            .step(set.colors.as_flattened_mut(), grads.colors.as_flattened(), r.colors, t, 1.0);
        for c in set.colors.as_flattened_mut() {
            *c = c.clamp(0.0, 1.0);
        }
        for th in &mut set.thetas {
            *th = th.rem_euclid(TAU);
            // rem_euclid can round up to exactly TAU in f32.
            if *th >= TAU {
                *th = 0.0;
            }
        }
    }
}

/// Reported after every step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Progress {
    /// Number of updates applied so far.
    pub step: usize,
    /// Loss of the set before this update.
    pub loss: f64,
    pub psnr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub optimizer: Adam,
    /// Loss before each update, then the loss of the final set:
    /// `iterations + 1` entries.
    pub loss_history: Vec<f64>,
    /// `(step, PSNR in dB)` every [`PSNR_INTERVAL`] steps and at the end.
    pub psnr_history: Vec<(usize, f64)>,
}

impl TrainState {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history always holds the final evaluation")
    }

    pub fn final_psnr(&self) -> f64 {
        self.psnr_history.last().expect("history always holds the final evaluation").1
    }
}

pub fn train(image: &ImageBuffer, set: GaussianSet<f32>, config: &EncoderConfig) -> Result<(GaussianSet<f32>, TrainState)> {
    train_with(image, set, config, |_| {})
}

/// Runs `config.iterations` Adam steps. Fails with [`Error::NonFiniteLoss`]
/// as soon as the loss or any gradient is not finite.
pub fn train_with(
    image: &ImageBuffer,
    mut set: GaussianSet<f32>,
    config: &EncoderConfig,
    mut on_step: impl FnMut(&Progress),
) -> Result<(GaussianSet<f32>, TrainState)> {
    config.validate()?;
    if set.is_empty() || !set.is_consistent() {
        return Err(Error::EmptySet);
    }
    let (h, w) = image.dims();
    let target: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let opts = RenderOptions { blend: config.blend };
    let objective = CompositeLoss::new(&target, h, w, config.lambda_l)?;
    let mut optimizer = Adam::new(set.len(), config.learning_rates, h.max(w) as f64);
    let mut loss_history = Vec::with_capacity(config.iterations + 1);
    let mut psnr_history = Vec::new();

    let evaluate = |set: &GaussianSet<f32>, step: usize| -> Result<(crate::render::RenderOutput<f32>, LossEval)> {
        let out = render_with(set, h, w, opts);
        let rendered: Vec<f64> = out.pixels.iter().map(|&v| v as f64).collect();
        let eval = objective.eval(&rendered)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("loss evaluated to {}", eval.loss),
            });
        }
        Ok((out, eval))
    };

    for step in 0..config.iterations {
        let (out, eval) = evaluate(&set, step)?;
        loss_history.push(eval.loss);
        let psnr = (step % PSNR_INTERVAL == 0).then(|| psnr_from_mse(eval.mse));
        if let Some(p) = psnr {
            psnr_history.push((step, p));
        }
        let d_image: Vec<f32> = eval.grad.iter().map(|&g| g as f32).collect();
        let grads = backward(&set, &out, &d_image);
        if !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: "non-finite parameter gradient".into(),
            });
        }
        optimizer.update(&mut set, &grads);
        on_step(&Progress {
            step: step + 1,
            loss: eval.loss,
            psnr,
        });
    }
    let (_, eval) = evaluate(&set, config.iterations)?;
    loss_history.push(eval.loss);
    psnr_history.push((config.iterations, psnr_from_mse(eval.mse)));
    Ok((
        set,
        TrainState {
            optimizer,
            loss_history,
            psnr_history,
        },
    ))
}

//! Noise schedules, forward noising and the score-distillation residuals
//! (SDS and interval score matching) evaluated against a pluggable
//! [`Denoiser`].
//!
//! [`GaussianOracle`] is the exact noise predictor for data concentrated at
//! a single point, which gives every loss here a closed form to test
//! against.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Cumulative signal coefficients `alpha_bar[t]` for `t = 0..=T` and
/// per-step loss weights `omega[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    alpha_bar: Vec<f64>,
    omega: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear-beta schedule: `alpha_bar[t] = prod_{s<=t} (1 - beta_s)` with
    /// `beta_1 = beta_start` and `beta_T = beta_end`. Weights default to one.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidRange(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidRange(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for s in 1..=steps {
            let frac = (s - 1) as f64 / (steps - 1) as f64;
            let beta = beta_start + (beta_end - beta_start) * frac;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Ok(Self {
            steps,
            alpha_bar,
            omega: vec![1.0; steps + 1],
        })
    }

    pub fn with_omega(mut self, omega: Vec<f64>) -> Result<Self> {
        if omega.len() != self.steps + 1 {
            return Err(Error::shape(format!(
                "omega needs {} entries, got {}",
                self.steps + 1,
                omega.len()
            )));
        }
        if omega.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidRange("omega must be finite and >= 0".into()));
        }
        self.omega = omega;
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or_else(|| Error::InvalidRange(format!("step {t} outside 0..={}", self.steps)))
    }

    pub fn omega(&self, t: usize) -> Result<f64> {
        self.omega
            .get(t)
            .copied()
            .ok_or_else(|| Error::InvalidRange(format!("step {t} outside 0..={}", self.steps)))
    }
}

/// Conditioning label passed to a denoiser.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Condition {
    Text(String),
    /// The null embedding used by the interval-matching reference branch.
    Unconditional,
}

impl Condition {
    pub fn text(label: impl Into<String>) -> Self {
        Condition::Text(label.into())
    }
}

/// Noise predictor `ε̂(x_t, t, condition)`.
pub trait Denoiser: Send + Sync {
    fn predict(&self, x_t: &Tensor, t: usize, cond: &Condition) -> Result<Tensor>;

    /// Vector-Jacobian product `(∂ε̂/∂x_t)ᵀ · upstream`.
    fn vjp(&self, _x_t: &Tensor, _t: usize, _cond: &Condition, _upstream: &Tensor) -> Result<Tensor> {
        Err(Error::NotDifferentiable)
    }
}

/// Exact noise prediction for data concentrated at `mean`:
/// `ε̂ = (x_t − √ᾱ_t μ) / √(1 − ᾱ_t)`. Conditioning is ignored.
///
/// At `t = 0` the input carries no noise and the prediction is zero.
#[derive(Clone, Debug)]
pub struct GaussianOracle {
    mean: Tensor,
    schedule: NoiseSchedule,
}

impl GaussianOracle {
    pub fn new(mean: Tensor, schedule: NoiseSchedule) -> Self {
        Self { mean, schedule }
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    fn coefficients(&self, x_t: &Tensor, t: usize) -> Result<Option<(f64, f64)>> {
        if x_t.shape() != self.mean.shape() {
            return Err(Error::shape(format!(
                "oracle mean {:?} vs input {:?}",
                self.mean.shape(),
                x_t.shape()
            )));
        }
        let ab = self.schedule.alpha_bar(t)?;
        let sigma = (1.0 - ab).sqrt();
        if sigma == 0.0 {
            return Ok(None);
        }
        Ok(Some((ab.sqrt(), sigma)))
    }
}

impl Denoiser for GaussianOracle {
    fn predict(&self, x_t: &Tensor, t: usize, _cond: &Condition) -> Result<Tensor> {
        match self.coefficients(x_t, t)? {
            None => Ok(Tensor::zeros(x_t.shape())),
            Some((signal, sigma)) => x_t.zip_map(&self.mean, |x, m| (x - signal * m) / sigma),
        }
    }

    fn vjp(&self, x_t: &Tensor, t: usize, _cond: &Condition, upstream: &Tensor) -> Result<Tensor> {
        match self.coefficients(x_t, t)? {
            None => Ok(Tensor::zeros(x_t.shape())),
            Some((_, sigma)) => Ok(upstream.scale(1.0 / sigma)),
        }
    }
}

/// `√ᾱ_t · x0 + √(1 − ᾱ_t) · eps`
pub fn add_noise(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    let ab = sched.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eps, |x, e| a * x + b * e)
}

/// Scaled clean-signal estimate `(x_t − √(1 − ᾱ_t) ε̂) / √ᾱ_t`.
pub fn predict_x0(x_t: &Tensor, eps_hat: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    let ab = sched.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.zip_map(eps_hat, |x, e| (x - b * e) / a)
}

/// Score-distillation loss and its update direction.
#[derive(Clone, Debug)]
pub struct SdsOutput {
    pub loss: f64,
    /// `ω(t)·(ε̂ − eps)`, the denoiser Jacobian dropped.
    pub grad: Tensor,
    /// `ε̂ − eps` at the evaluation point.
    pub residual: Tensor,
}

/// `ω(t)‖ε̂(x_t, t, cond) − eps‖²` with the score-distillation gradient.
pub fn sds_residual(
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    den: &dyn Denoiser,
    cond: &Condition,
    sched: &NoiseSchedule,
) -> Result<SdsOutput> {
    let x_t = add_noise(x0, t, eps, sched)?;
    let eps_hat = den.predict(&x_t, t, cond)?;
    let residual = eps_hat.sub(eps)?;
    let w = sched.omega(t)?;
    Ok(SdsOutput {
        loss: w * residual.norm_sq(),
        grad: residual.scale(w),
        residual,
    })
}

/// Stop-gradient objective whose exact gradient is the SDS update:
/// `ω · ⟨sg(ε̂ − eps), x0⟩`.
pub fn sds_surrogate(x0: &Tensor, frozen_residual: &Tensor, weight: f64) -> Result<f64> {
    Ok(weight * frozen_residual.dot(x0)?)
}

fn interval_start(t: usize, delta_t: usize) -> Result<usize> {
    t.checked_sub(delta_t)
        .ok_or_else(|| Error::InvalidRange(format!("interval start {t} - {delta_t} < 0")))
}

/// How the interval-matching reference point `x_s` is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IsmNoising {
    /// `x_s = add_noise(x0, s, eps)` with the shared noise draw.
    Fresh,
    /// Deterministic DDIM inversion of `x0` up to `s` in the given stride,
    /// then a single DDIM step from `s` to `t`.
    DdimInversion { stride: usize },
}

/// `ω(t)‖ε̂(x_t, t, cond) − ε̂(x_s, s, ∅)‖²` with `s = t − delta_t` and
/// both points noised from `x0` with the same `eps`.
pub fn ism_residual(
    x0: &Tensor,
    t: usize,
    delta_t: usize,
    den: &dyn Denoiser,
    cond: &Condition,
    sched: &NoiseSchedule,
    eps: &Tensor,
) -> Result<f64> {
    ism_loss(x0, t, delta_t, den, cond, sched, eps, IsmNoising::Fresh)
}

#[allow(clippy::too_many_arguments)]
pub fn ism_loss(
    x0: &Tensor,
    t: usize,
    delta_t: usize,
    den: &dyn Denoiser,
    cond: &Condition,
    sched: &NoiseSchedule,
    eps: &Tensor,
    noising: IsmNoising,
) -> Result<f64> {
    let s = interval_start(t, delta_t)?;
    sched.alpha_bar(t)?;
    let (x_s, x_t) = match noising {
        IsmNoising::Fresh => (add_noise(x0, s, eps, sched)?, add_noise(x0, t, eps, sched)?),
        IsmNoising::DdimInversion { stride } => {
            let x_s = ddim_invert(x0, s, stride.max(1), den, sched)?;
            let e = den.predict(&x_s, s, &Condition::Unconditional)?;
            (x_s.clone(), ddim_step(&x_s, &e, s, t, sched)?)
        }
    };
    let pred_t = den.predict(&x_t, t, cond)?;
    let pred_s = den.predict(&x_s, s, &Condition::Unconditional)?;
    Ok(sched.omega(t)? * pred_t.sub(&pred_s)?.norm_sq())
}

fn ddim_step(x: &Tensor, eps_hat: &Tensor, from: usize, to: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    let x0_hat = predict_x0(x, eps_hat, from, sched)?;
    add_noise(&x0_hat, to, eps_hat, sched)
}

fn ddim_invert(x0: &Tensor, target: usize, stride: usize, den: &dyn Denoiser, sched: &NoiseSchedule) -> Result<Tensor> {
    let mut x = x0.clone();
    let mut at = 0;
    while at < target {
        let next = (at + stride).min(target);
        let e = den.predict(&x, at, &Condition::Unconditional)?;
        x = ddim_step(&x, &e, at, next, sched)?;
        at = next;
    }
    Ok(x)
}

/// Interval-matching loss (fresh noising) with its exact gradient in `x0`,
/// differentiating through the denoiser at both points.
#[allow(clippy::too_many_arguments)]
pub fn ism_residual_with_grad(
    x0: &Tensor,
    t: usize,
    delta_t: usize,
    den: &dyn Denoiser,
    cond: &Condition,
    sched: &NoiseSchedule,
    eps: &Tensor,
) -> Result<(f64, Tensor)> {
    let s = interval_start(t, delta_t)?;
    let x_t = add_noise(x0, t, eps, sched)?;
    let x_s = add_noise(x0, s, eps, sched)?;
    let pred_t = den.predict(&x_t, t, cond)?;
    let uncond = Condition::Unconditional;
    let pred_s = den.predict(&x_s, s, &uncond)?;
    let r = pred_t.sub(&pred_s)?;
    let w = sched.omega(t)?;

    let up = r.scale(2.0 * w);
    let mut grad = den.vjp(&x_t, t, cond, &up)?.scale(sched.alpha_bar(t)?.sqrt());
    let back_s = den.vjp(&x_s, s, &uncond, &up)?;
    grad.axpy(-sched.alpha_bar(s)?.sqrt(), &back_s)?;
    Ok((w * r.norm_sq(), grad))
}

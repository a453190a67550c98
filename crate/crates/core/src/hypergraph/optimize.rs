use serde::{Deserialize, Serialize};

use super::{mvhg_loss_with_structure, HgnnParams, LatentMask, MultiViewLatents, MvhgStructure};
use crate::diffusion::{add_noise, ism_residual_with_grad, predict_x0, Condition, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng::{derive, seeded};
use crate::tensor::Tensor;

/// Weighted sum of the interval-matching and hypergraph losses.
pub fn total_loss(l_ism: f64, l_mvhg: f64, lambda_ism: f64, lambda_mvhg: f64) -> f64 {
    lambda_ism * l_ism + lambda_mvhg * l_mvhg
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub ism: f64,
    pub mvhg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { ism: 1.0, mvhg: 0.1 }
    }
}

impl LossWeights {
    pub fn total(&self, l_ism: f64, l_mvhg: f64) -> f64 {
        total_loss(l_ism, l_mvhg, self.ism, self.mvhg)
    }
}

/// Losses evaluated at the parameters entering step `step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_ism: f64,
    pub l_mvhg: f64,
    pub l_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSpec {
    pub steps: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub k: usize,
    /// Upper timestep of the matching interval.
    pub t: usize,
    pub delta_t: usize,
    /// Not read from config files; callers derive it from their own seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for OptimizeSpec {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.05,
            weights: LossWeights::default(),
            k: 8,
            t: 200,
            delta_t: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeOutcome {
    pub trajectory: Vec<StepRecord>,
    pub latents: MultiViewLatents,
}

/// Gradient descent on the weighted objective over free latent parameters.
///
/// The parameters stand in for rendered views. Each step draws fresh noise,
/// takes the exact interval-matching gradient through the denoiser, and
/// pulls the parameters toward the denoiser's clean estimate through the
/// hypergraph loss (the estimate is treated as a constant target). Both
/// branches use `masks`.
pub fn optimize_latents(
    init: &MultiViewLatents,
    den: &dyn Denoiser,
    cond: &Condition,
    sched: &NoiseSchedule,
    params: &HgnnParams,
    masks: &LatentMask,
    spec: &OptimizeSpec,
) -> Result<OptimizeOutcome> {
    if spec.steps == 0 {
        return Err(Error::InvalidRange("steps must be >= 1".into()));
    }
    if !(spec.lr > 0.0 && spec.lr.is_finite()) {
        return Err(Error::InvalidRange(format!(
            "learning rate {} must be positive",
            spec.lr
        )));
    }
    if spec.weights.ism < 0.0 || spec.weights.mvhg < 0.0 {
        return Err(Error::InvalidRange("loss weights must be non-negative".into()));
    }
    if !masks.matches(init) {
        return Err(Error::shape("mask grid does not match latents"));
    }
    let labels = init.labels().to_vec();
    let mut theta = init.stacked();
    let mut trajectory = Vec::with_capacity(spec.steps);
    let mut initial = None;

    for step in 0..spec.steps {
        let mut rng = seeded(derive(spec.seed, step as u64));
        let eps = Tensor::randn(theta.shape(), 1.0, &mut rng);
        let (l_ism, g_ism) = ism_residual_with_grad(&theta, spec.t, spec.delta_t, den, cond, sched, &eps)?;

        let x_t = add_noise(&theta, spec.t, &eps, sched)?;
        let target = predict_x0(&x_t, &den.predict(&x_t, spec.t, cond)?, spec.t, sched)?;
        let z = MultiViewLatents::from_stacked(&target, labels.clone())?;
        let current = MultiViewLatents::from_stacked(&theta, labels.clone())?;
        let structure = MvhgStructure::build(&z, &current, spec.k)?;
        let mvhg = mvhg_loss_with_structure(&z, &current, masks, masks, params, &structure)?;

        let l_total = spec.weights.total(l_ism, mvhg.loss);
        if !l_total.is_finite() {
            return Err(Error::NonFinite("optimize_latents"));
        }
        trajectory.push(StepRecord {
            step,
            l_ism,
            l_mvhg: mvhg.loss,
            l_total,
        });
        let start = *initial.get_or_insert(l_total);
        if l_total > 10.0 * start {
            return Err(Error::DivergenceDetected {
                step,
                initial: start,
                current: l_total,
                trajectory,
            });
        }

        theta.axpy(-spec.lr * spec.weights.ism, &g_ism)?;
        theta.axpy(-spec.lr * spec.weights.mvhg, &mvhg.grad.stacked())?;
    }
    Ok(OptimizeOutcome {
        trajectory,
        latents: MultiViewLatents::from_stacked(&theta, labels)?,
    })
}

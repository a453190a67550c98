use serde::{Deserialize, Serialize};

use super::model::{Stage, ToyModel, Trace, TraceGrad};
use super::teachers::{additive_fuse_teachers, DistillDataset, Record, Teacher};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::rng::{derive, normal_vec, seeded};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Configured constants.
    #[default]
    Fixed,
    /// Each term divided by a running average of its own magnitude.
    InverseEma,
}

/// What the student's noise prediction is regressed onto.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseTarget {
    /// The teacher's prediction on the same input.
    #[default]
    Teacher,
    /// The noise actually injected.
    Sampled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudentInit {
    #[default]
    Base,
    /// Start from the additive fusion of all teachers.
    Fused,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub lr: f64,
    /// Records per step, drawn cyclically from the scheduled teacher's data.
    pub batch_size: usize,
    /// Per text-layer weights; empty means uniform `1/L`.
    pub alpha: Vec<f64>,
    /// Per hidden unet-layer weights; empty means uniform `1/M`.
    pub beta: Vec<f64>,
    /// `[text, noise]` weights for stage 1.
    pub stage1_weights: [f64; 2],
    /// `[text, unet, noise]` weights for stage 2.
    pub stage2_weights: [f64; 3],
    pub weight_mode: WeightMode,
    /// Stage 2 alternates this many noise-only steps with as many
    /// alignment-only steps.
    pub alternation_interval: usize,
    pub noise_target: NoiseTarget,
    pub student_init: StudentInit,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Not read from config files; callers derive it from their own seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            stage1_iters: 150,
            stage2_iters: 450,
            lr: 0.2,
            batch_size: 20,
            alpha: Vec::new(),
            beta: Vec::new(),
            stage1_weights: [1.0, 1.0],
            stage2_weights: [1.0, 1.0, 1.0],
            weight_mode: WeightMode::Fixed,
            alternation_interval: 10,
            noise_target: NoiseTarget::Teacher,
            student_init: StudentInit::Base,
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            seed: 0,
        }
    }
}

impl DistillConfig {
    fn validate(&self) -> Result<()> {
        if self.stage1_iters == 0 || self.stage2_iters == 0 {
            return Err(Error::InvalidRange("both stages need at least one iteration".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidRange(format!("learning rate {}", self.lr)));
        }
        if self.batch_size == 0 || self.alternation_interval == 0 {
            return Err(Error::InvalidRange(
                "batch size and alternation interval must be >= 1".into(),
            ));
        }
        let weights = self
            .alpha
            .iter()
            .chain(&self.beta)
            .chain(&self.stage1_weights)
            .chain(&self.stage2_weights);
        if weights.clone().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidRange(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }
}

/// Cycles through `0..n`.
#[derive(Clone, Debug)]
pub struct RoundRobin {
    n: usize,
    next: usize,
}

impl RoundRobin {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "round robin over nothing");
        Self { n, next: 0 }
    }
}

impl Iterator for RoundRobin {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let i = self.next;
        self.next = (self.next + 1) % self.n;
        Some(i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Stage 1, text and noise terms together.
    Joint,
    /// Stage 2, noise term only.
    Noise,
    /// Stage 2, feature-alignment terms only.
    Align,
}

/// Batch-mean losses at the parameters entering an iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub stage: u8,
    pub phase: Phase,
    pub teacher: usize,
    pub l_text: f64,
    pub l_unet: f64,
    pub l_noise: f64,
    /// Weighted objective actually descended.
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub student: ToyModel,
    /// Snapshot of the student when Stage 1 ended.
    pub after_stage1: ToyModel,
    pub history: Vec<LossRecord>,
}

/// Starting student for `cfg.student_init`, carrying every trigger.
pub fn initial_student(base: &ToyModel, teachers: &[Teacher], cfg: &DistillConfig) -> Result<ToyModel> {
    match cfg.student_init {
        StudentInit::Base => Ok(super::with_teacher_labels(base, teachers)),
        StudentInit::Fused => additive_fuse_teachers(base, teachers),
    }
}

struct Ema {
    value: Option<f64>,
}

impl Ema {
    const DECAY: f64 = 0.99;
    const FLOOR: f64 = 1e-8;

    fn weight(&mut self, sample: f64) -> f64 {
        let v = match self.value {
            None => sample,
            Some(prev) => Self::DECAY * prev + (1.0 - Self::DECAY) * sample,
        };
        self.value = Some(v);
        1.0 / v.max(Self::FLOOR)
    }
}

struct Terms {
    l_text: f64,
    l_unet: f64,
    l_noise: f64,
    g_text: Vec<Tensor>,
    g_unet: Vec<Tensor>,
    g_noise: Tensor,
}

fn mse_with_grad(s: &Tensor, t: &[f64]) -> (f64, Tensor) {
    let n = t.len() as f64;
    let diff: Vec<f64> = s.data().iter().zip(t).map(|(a, b)| a - b).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = Tensor::new(s.shape().to_vec(), diff.iter().map(|d| 2.0 * d / n).collect()).expect("same shape");
    (loss, grad)
}

fn uniform(v: &[f64], n: usize) -> Vec<f64> {
    if v.is_empty() {
        vec![1.0 / n as f64; n]
    } else {
        v.to_vec()
    }
}

fn terms(s: &Trace, t: &Trace, noise_target: &[f64], alpha: &[f64], beta: &[f64]) -> Terms {
    let (ps, pt) = (s.pooled(), t.pooled());
    let mut l_text = 0.0;
    let mut g_text = Vec::with_capacity(ps.len());
    for ((a, b), w) in ps.iter().zip(&pt).zip(alpha) {
        let (l, g) = mse_with_grad(a, b.data());
        l_text += w * l;
        g_text.push(g.scale(*w));
    }
    let hidden = s.unet_acts.len() - 1;
    let mut l_unet = 0.0;
    let mut g_unet = Vec::with_capacity(hidden);
    for ((a, b), w) in s.unet_acts[..hidden].iter().zip(&t.unet_acts[..hidden]).zip(beta) {
        let (l, g) = mse_with_grad(a, b.data());
        l_unet += w * l;
        g_unet.push(g.scale(*w));
    }
    let (l_noise, g_noise) = mse_with_grad(s.output(), noise_target);
    Terms {
        l_text,
        l_unet,
        l_noise,
        g_text,
        g_unet,
        g_noise,
    }
}

/// Term means and per-term weight-gradient sums over one batch.
struct BatchTerms {
    means: [f64; 3],
    grads: [Vec<Tensor>; 3],
}

#[allow(clippy::too_many_arguments)]
fn batch_terms(
    model: &ToyModel,
    teacher: &ToyModel,
    records: &[&Record],
    rng: &mut crate::rng::Rng,
    sched: &NoiseSchedule,
    target: NoiseTarget,
    alpha: &[f64],
    beta: &[f64],
) -> Result<BatchTerms> {
    let n_hidden = model.unet_layers().len() - 1;
    let mut means = [0.0; 3];
    let mut grads: [Vec<Tensor>; 3] = Default::default();
    for rec in records {
        let t = rng.random_range(1..sched.steps());
        let ab = sched.alpha_bar(t)?;
        let eps = normal_vec(rng, rec.latent.len());
        let x_t: Vec<f64> = rec
            .latent
            .iter()
            .zip(&eps)
            .map(|(z, e)| ab.sqrt() * z + (1.0 - ab).sqrt() * e)
            .collect();
        let ts = model.trace(&rec.trigger, &rec.view, &x_t)?;
        let tt = teacher.trace(&rec.trigger, &rec.view, &x_t)?;
        let target = match target {
            NoiseTarget::Teacher => tt.output().data().to_vec(),
            NoiseTarget::Sampled => eps,
        };
        let tm = terms(&ts, &tt, &target, alpha, beta);
        let mut noise_taps = vec![None; n_hidden + 1];
        noise_taps[n_hidden] = Some(tm.g_noise);
        // one backward pass per term, so term weights can be chosen after
        // the batch means are known
        let per = [
            model.backward(
                &ts,
                &TraceGrad {
                    pooled: tm.g_text.into_iter().map(Some).collect(),
                    unet: vec![],
                },
            )?,
            model.backward(
                &ts,
                &TraceGrad {
                    pooled: vec![],
                    unet: tm.g_unet.into_iter().map(Some).collect(),
                },
            )?,
            model.backward(
                &ts,
                &TraceGrad {
                    pooled: vec![],
                    unet: noise_taps,
                },
            )?,
        ];
        for (k, (g, l)) in per.into_iter().zip([tm.l_text, tm.l_unet, tm.l_noise]).enumerate() {
            means[k] += l / records.len() as f64;
            grads[k] = if grads[k].is_empty() {
                g
            } else {
                grads[k].iter().zip(&g).map(|(a, b)| a.add(b)).collect::<Result<_>>()?
            };
        }
    }
    let scale = 1.0 / records.len() as f64;
    for g in &mut grads {
        for t in g.iter_mut() {
            *t = t.scale(scale);
        }
    }
    Ok(BatchTerms { means, grads })
}

fn combine(grads: &[Vec<Tensor>; 3], w: [f64; 3]) -> Result<Vec<Tensor>> {
    (0..grads[0].len())
        .map(|i| {
            grads[0][i]
                .scale(w[0])
                .add(&grads[1][i].scale(w[1]))?
                .add(&grads[2][i].scale(w[2]))
        })
        .collect()
}

fn phase_weights(cfg: &DistillConfig, phase: Phase) -> [f64; 3] {
    match phase {
        Phase::Joint => [cfg.stage1_weights[0], 0.0, cfg.stage1_weights[1]],
        Phase::Noise => [0.0, 0.0, cfg.stage2_weights[2]],
        Phase::Align => [cfg.stage2_weights[0], cfg.stage2_weights[1], 0.0],
    }
}

/// Two-stage distillation of several teachers into one student.
///
/// Stage 1 trains only the text layers on text-feature alignment plus noise
/// regression. Stage 2 trains every layer, alternating blocks of
/// noise-only steps with blocks of feature-alignment steps (pooled text
/// features and hidden unet activations). Each step serves one teacher in
/// round-robin order with a batch of that teacher's records, noised at a
/// seeded timestep.
pub fn distill(
    student: &ToyModel,
    teachers: &[Teacher],
    datasets: &[DistillDataset],
    cfg: &DistillConfig,
) -> Result<DistillOutcome> {
    cfg.validate()?;
    if teachers.is_empty() {
        return Err(Error::EmptyDataset("no teachers".into()));
    }
    if datasets.len() != teachers.len() {
        return Err(Error::shape(format!(
            "{} datasets for {} teachers",
            datasets.len(),
            teachers.len()
        )));
    }
    for (t, d) in teachers.iter().zip(datasets) {
        if d.is_empty() {
            return Err(Error::EmptyDataset(format!("dataset for {}", t.trigger)));
        }
        if let Some(r) = d.records.iter().find(|r| r.trigger != t.trigger) {
            return Err(Error::UnknownTrigger(format!(
                "{} in dataset of {}",
                r.trigger, t.trigger
            )));
        }
        if !t.model.same_architecture(student) {
            return Err(Error::shape(format!("teacher {} differs from the student", t.trigger)));
        }
    }
    let n_text = student.text_layers().len();
    let n_hidden = student.unet_layers().len() - 1;
    let alpha = uniform(&cfg.alpha, n_text);
    let beta = uniform(&cfg.beta, n_hidden);
    if alpha.len() != n_text || beta.len() != n_hidden {
        return Err(Error::shape("per-layer weights do not match the layer count"));
    }
    let sched = cfg.schedule()?;

    let mut model = student.clone();
    for t in teachers {
        model.adopt_labels(&t.model);
    }
    let mut rr = RoundRobin::new(teachers.len());
    let mut cursors = vec![0usize; teachers.len()];
    let mut emas = [Ema { value: None }, Ema { value: None }, Ema { value: None }];
    let total_iters = cfg.stage1_iters + cfg.stage2_iters;
    let mut history = Vec::with_capacity(total_iters);
    let mut after_stage1 = None;

    for iter in 0..total_iters {
        let stage = if iter < cfg.stage1_iters { 1 } else { 2 };
        if stage == 2 && after_stage1.is_none() {
            after_stage1 = Some(model.clone());
        }
        let phase = if stage == 1 {
            Phase::Joint
        } else if ((iter - cfg.stage1_iters) / cfg.alternation_interval).is_multiple_of(2) {
            Phase::Noise
        } else {
            Phase::Align
        };
        let ti = rr.next().expect("infinite");
        let data = &datasets[ti].records;
        let batch: Vec<&Record> = (0..cfg.batch_size.min(data.len()))
            .map(|_| {
                let r = &data[cursors[ti] % data.len()];
                cursors[ti] += 1;
                r
            })
            .collect();
        let mut rng = seeded(derive(cfg.seed, iter as u64));
        let bt = batch_terms(
            &model,
            &teachers[ti].model,
            &batch,
            &mut rng,
            &sched,
            cfg.noise_target,
            &alpha,
            &beta,
        )?;

        let mut w = phase_weights(cfg, phase);
        if cfg.weight_mode == WeightMode::InverseEma {
            for k in 0..3 {
                if w[k] > 0.0 {
                    w[k] *= emas[k].weight(bt.means[k]);
                }
            }
        }
        let [l_text, l_unet, l_noise] = bt.means;
        let objective = w[0] * l_text + w[1] * l_unet + w[2] * l_noise;
        if !objective.is_finite() {
            return Err(Error::NonFinite("distill"));
        }
        history.push(LossRecord {
            iter,
            stage,
            phase,
            teacher: ti,
            l_text,
            l_unet,
            l_noise,
            objective,
        });
        let stage_filter = if stage == 1 { Some(Stage::Text) } else { None };
        model.descend(&combine(&bt.grads, w)?, cfg.lr, stage_filter)?;
    }
    Ok(DistillOutcome {
        after_stage1: after_stage1.expect("stage 2 has at least one iteration"),
        student: model,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::{generate_teacher_dataset, make_teachers, ModelSpec, TeacherSpec};

    fn setup(n: usize, divergence: f64, seed: u64) -> (ToyModel, Vec<Teacher>, Vec<DistillDataset>) {
        let base = ToyModel::base(&ModelSpec::default(), seed).unwrap();
        let teachers = make_teachers(
            &base,
            &TeacherSpec {
                count: n,
                divergence,
                seed,
                ..TeacherSpec::default()
            },
        )
        .unwrap();
        let data = teachers
            .iter()
            .enumerate()
            .map(|(i, t)| generate_teacher_dataset(&t.model, &t.trigger, &["front", "up"], 10, 50 + i as u64).unwrap())
            .collect();
        (base, teachers, data)
    }

    #[test]
    fn round_robin_is_balanced() {
        let mut counts = [0; 3];
        for i in RoundRobin::new(3).take(9) {
            counts[i] += 1;
        }
        assert_eq!(counts, [3, 3, 3]);
    }

    #[test]
    fn student_equal_to_teacher_starts_at_zero() {
        let (_, teachers, data) = setup(1, 1.0, 1);
        let cfg = DistillConfig {
            stage1_iters: 2,
            stage2_iters: 30,
            ..DistillConfig::default()
        };
        let out = distill(&teachers[0].model, &teachers, &data, &cfg).unwrap();
        let first = out.history[0];
        assert_eq!((first.l_text, first.l_unet, first.l_noise), (0.0, 0.0, 0.0));
        assert!(out.history.iter().all(|r| r.objective == 0.0));
        assert_eq!(out.student, teachers[0].model);
    }

    #[test]
    fn aligned_teachers_text_loss_drops_tenfold() {
        for seed in 0..5 {
            let (base, teachers, data) = setup(2, 0.0, seed);
            let cfg = DistillConfig {
                seed,
                ..DistillConfig::default()
            };
            let out = distill(
                &initial_student(&base, &teachers, &cfg).unwrap(),
                &teachers,
                &data,
                &cfg,
            )
            .unwrap();
            let window = |r: &[LossRecord]| r.iter().map(|x| x.l_text).sum::<f64>() / r.len() as f64;
            let h = &out.history;
            let initial = window(&h[..2]);
            let last = window(&h[h.len() - 20..]);
            assert!(last * 10.0 <= initial, "seed {seed}: {initial} -> {last}");
        }
    }

    #[test]
    fn stage_discipline() {
        let (base, teachers, data) = setup(3, 1.0, 2);
        let before = teachers.clone();
        let cfg = DistillConfig {
            stage1_iters: 12,
            stage2_iters: 12,
            ..DistillConfig::default()
        };
        let student = initial_student(&base, &teachers, &cfg).unwrap();
        let out = distill(&student, &teachers, &data, &cfg).unwrap();
        assert_eq!(out.after_stage1.unet_layers(), student.unet_layers());
        assert_ne!(out.after_stage1.text_layers(), student.text_layers());
        assert_ne!(out.student.unet_layers(), student.unet_layers());
        assert_eq!(teachers, before);
        let phases: Vec<Phase> = out.history.iter().map(|r| r.phase).collect();
        assert!(phases[..12].iter().all(|p| *p == Phase::Joint));
        assert!(phases[12..22].iter().all(|p| *p == Phase::Noise));
        assert!(phases[22..].iter().all(|p| *p == Phase::Align));
    }

    #[test]
    fn single_step_decreases_record_loss() {
        for seed in 0..5 {
            let (base, teachers, data) = setup(1, 1.0, seed);
            let student = initial_student(&base, &teachers, &DistillConfig::default()).unwrap();
            let rec = [&data[0].records[0]];
            let sched = DistillConfig::default().schedule().unwrap();
            let alpha = uniform(&[], 2);
            let beta = uniform(&[], 2);
            for phase in [Phase::Joint, Phase::Noise, Phase::Align] {
                let w = phase_weights(&DistillConfig::default(), phase);
                let eval = |m: &ToyModel| {
                    let bt = batch_terms(
                        m,
                        &teachers[0].model,
                        &rec,
                        &mut seeded(seed),
                        &sched,
                        NoiseTarget::Teacher,
                        &alpha,
                        &beta,
                    )
                    .unwrap();
                    (w[0] * bt.means[0] + w[1] * bt.means[1] + w[2] * bt.means[2], bt)
                };
                let (before, bt) = eval(&student);
                let mut stepped = student.clone();
                stepped.descend(&combine(&bt.grads, w).unwrap(), 1e-3, None).unwrap();
                let (after, _) = eval(&stepped);
                assert!(after < before, "seed {seed} {phase:?}: {before} -> {after}");
            }
        }
    }

    #[test]
    fn inverse_ema_weights() {
        let mut e = Ema { value: None };
        assert_eq!(e.weight(4.0), 0.25);
        assert!((e.weight(2.0) - 1.0 / (0.99 * 4.0 + 0.01 * 2.0)).abs() < 1e-15);
        let mut z = Ema { value: None };
        assert_eq!(z.weight(0.0), 1e8);

        let (base, teachers, data) = setup(2, 1.0, 3);
        let cfg = DistillConfig {
            weight_mode: WeightMode::InverseEma,
            stage1_iters: 5,
            stage2_iters: 25,
            ..DistillConfig::default()
        };
        let out = distill(
            &initial_student(&base, &teachers, &cfg).unwrap(),
            &teachers,
            &data,
            &cfg,
        )
        .unwrap();
        // the first joint step weights each term by its own inverse
        assert!((out.history[0].objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn input_validation() {
        let (base, teachers, data) = setup(2, 1.0, 4);
        let cfg = DistillConfig::default();
        assert!(matches!(
            distill(&base, &teachers, &data[..1], &cfg),
            Err(Error::ShapeMismatch(_))
        ));
        let mut empty = data.clone();
        empty[1] = DistillDataset::default();
        assert!(matches!(
            distill(&base, &teachers, &empty, &cfg),
            Err(Error::EmptyDataset(_))
        ));
        let bad = DistillConfig {
            stage1_iters: 0,
            ..DistillConfig::default()
        };
        assert!(distill(&base, &teachers, &data, &bad).is_err());
        let neg = DistillConfig {
            stage2_weights: [1.0, -1.0, 1.0],
            ..DistillConfig::default()
        };
        assert!(distill(&base, &teachers, &data, &neg).is_err());
        let other = ToyModel::base(
            &ModelSpec {
                unet_hidden: vec![8],
                ..ModelSpec::default()
            },
            0,
        )
        .unwrap();
        assert!(matches!(
            distill(&other, &teachers, &data, &cfg),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn deterministic() {
        let (base, teachers, data) = setup(2, 1.0, 5);
        let cfg = DistillConfig {
            stage1_iters: 10,
            stage2_iters: 30,
            ..DistillConfig::default()
        };
        let s = initial_student(&base, &teachers, &cfg).unwrap();
        let a = distill(&s, &teachers, &data, &cfg).unwrap();
        let b = distill(&s, &teachers, &data, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.student, b.student);
    }
}

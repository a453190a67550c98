use serde::{Deserialize, Serialize};

use super::adapter::{lora_delta, AdapterSet, LoraAdapter};
use super::model::{additive_fuse, merge, ToyModel};
use crate::error::{Error, Result};
use crate::rng::{derive, label_hash, normal_vec, seeded};
use crate::synth::CATEGORIES;
use crate::tensor::{cosine_similarity, matmul, Tensor};

/// How synthetic teachers are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSpec {
    pub count: usize,
    pub rank: usize,
    /// 0 gives identical deltas; 1 gives independent ones.
    pub divergence: f64,
    /// `‖ΔW‖ / ‖W‖` per targeted layer.
    pub strength: f64,
    /// Layers to adapt; empty means every layer.
    pub targets: Vec<String>,
    /// Not read from config files; callers derive it from their own seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        Self {
            count: 2,
            rank: 4,
            divergence: 1.0,
            strength: 0.5,
            targets: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    pub trigger: String,
    pub adapters: AdapterSet,
    pub model: ToyModel,
}

/// Trigger for teacher `i`: the part categories first, then `concept_i`.
pub fn trigger_label(i: usize) -> String {
    CATEGORIES
        .get(i)
        .map_or_else(|| format!("concept_{i}"), |c| (*c).to_string())
}

fn factor(rng_seed: u64, rows: usize, cols: usize) -> Vec<f64> {
    normal_vec(&mut seeded(rng_seed), rows * cols)
}

/// Seeded teachers `merge(base, adapter_i)` with a trigger each.
///
/// Each factor is a blend `√(1−d)·shared + √d·own` of one draw shared by
/// all teachers and one per teacher, so `d` moves the deltas from
/// identical to independent. Each delta is rescaled to the requested
/// fraction of its layer's norm.
pub fn make_teachers(base: &ToyModel, spec: &TeacherSpec) -> Result<Vec<Teacher>> {
    if spec.count == 0 {
        return Err(Error::InvalidRange("need at least one teacher".into()));
    }
    if !(0.0..=1.0).contains(&spec.divergence) {
        return Err(Error::InvalidRange(format!(
            "divergence {} outside [0, 1]",
            spec.divergence
        )));
    }
    let targets: Vec<String> = if spec.targets.is_empty() {
        base.layers().map(|(_, l)| l.name.clone()).collect()
    } else {
        spec.targets.clone()
    };
    let (keep, own) = ((1.0 - spec.divergence).sqrt(), spec.divergence.sqrt());
    let mut teachers = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut adapters = Vec::with_capacity(targets.len());
        for name in &targets {
            let w = &base.layer(name)?.weight;
            let (d, k) = w.dims2()?;
            let r = spec.rank.min(d).min(k).max(1);
            let layer_seed = derive(spec.seed, label_hash(name));
            let blend = |tag: u64, rows, cols| -> Result<Tensor> {
                let shared = factor(derive(layer_seed, tag), rows, cols);
                let mine = factor(derive(derive(layer_seed, tag), i as u64 + 1), rows, cols);
                Tensor::new(
                    vec![rows, cols],
                    shared.iter().zip(&mine).map(|(s, m)| keep * s + own * m).collect(),
                )
            };
            let b = blend(1, d, r)?;
            let a = blend(2, r, k)?;
            let raw = matmul(&b, &a)?.norm();
            let scale = spec.strength * w.norm() * r as f64 / raw;
            adapters.push(LoraAdapter::new(name.clone(), b, a, scale)?);
        }
        let trigger = trigger_label(i);
        let set = AdapterSet::new(trigger.clone(), adapters);
        let mut model = merge(base, &set)?;
        model.register_label(&trigger);
        teachers.push(Teacher {
            trigger,
            adapters: set,
            model,
        });
    }
    Ok(teachers)
}

/// Concatenated deltas of an adapter set in the base model's layer order,
/// zero for untargeted layers.
pub fn flat_delta(base: &ToyModel, set: &AdapterSet) -> Result<Vec<f64>> {
    for ad in &set.adapters {
        base.layer(ad.target_layer())?;
    }
    let mut out = Vec::new();
    for (_, layer) in base.layers() {
        let mut total = vec![0.0; layer.weight.len()];
        for ad in set.adapters.iter().filter(|a| a.target_layer() == layer.name) {
            for (t, v) in total.iter_mut().zip(lora_delta(ad)?.data()) {
                *t += v;
            }
        }
        out.extend(total);
    }
    Ok(out)
}

/// Mean pairwise cosine similarity of the teachers' flattened deltas.
pub fn mean_pairwise_cosine(base: &ToyModel, teachers: &[Teacher]) -> Result<f64> {
    let flats = teachers
        .iter()
        .map(|t| flat_delta(base, &t.adapters))
        .collect::<Result<Vec<_>>>()?;
    let mut sum = 0.0;
    let mut pairs = 0;
    for i in 0..flats.len() {
        for j in i + 1..flats.len() {
            sum += cosine_similarity(&flats[i], &flats[j])?;
            pairs += 1;
        }
    }
    Ok(if pairs == 0 { 1.0 } else { sum / pairs as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub latent: Vec<f64>,
    pub trigger: String,
    pub view: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillDataset {
    pub records: Vec<Record>,
}

impl DistillDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn probe_noise(seed: u64, view: &str, j: usize, dim: usize) -> Vec<f64> {
    normal_vec(&mut seeded(derive(derive(seed, label_hash(view)), j as u64)), dim)
}

/// Latent samples from a teacher: its prediction on seeded noise for each
/// `(trigger, view)` prompt.
pub fn generate_teacher_dataset(
    teacher: &ToyModel,
    trigger: &str,
    views: &[&str],
    samples_per_view: usize,
    seed: u64,
) -> Result<DistillDataset> {
    if samples_per_view == 0 || views.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} views x {samples_per_view} samples",
            views.len()
        )));
    }
    teacher.embedding(trigger)?;
    let mut records = Vec::with_capacity(views.len() * samples_per_view);
    for view in views {
        for j in 0..samples_per_view {
            let noise = probe_noise(seed, view, j, teacher.latent_dim());
            records.push(Record {
                latent: teacher.predict(trigger, view, &noise)?,
                trigger: trigger.to_string(),
                view: view.to_string(),
            });
        }
    }
    Ok(DistillDataset { records })
}

/// Prompts used to compare a model against each teacher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSpec {
    pub views: Vec<String>,
    pub per_view: usize,
    /// Not read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            views: vec!["front".into(), "up".into()],
            per_view: 16,
            // distinct from dataset seeds so probes are held out
            seed: 0x009E_0BE5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preservation {
    pub per_teacher: Vec<f64>,
    pub average: f64,
}

/// Mean cosine similarity between the model's and each teacher's
/// predictions on that teacher's trigger, over seeded probe noise.
pub fn concept_preservation(model: &ToyModel, teachers: &[Teacher], probes: &ProbeSpec) -> Result<Preservation> {
    if probes.views.is_empty() || probes.per_view == 0 {
        return Err(Error::EmptyDataset("no probes".into()));
    }
    if teachers.is_empty() {
        return Err(Error::EmptyDataset("no teachers".into()));
    }
    let mut per_teacher = Vec::with_capacity(teachers.len());
    for t in teachers {
        let mut sum = 0.0;
        for view in &probes.views {
            for j in 0..probes.per_view {
                let noise = probe_noise(probes.seed, view, j, model.latent_dim());
                let a = model.predict(&t.trigger, view, &noise)?;
                let b = t.model.predict(&t.trigger, view, &noise)?;
                sum += cosine_similarity(&a, &b)?;
            }
        }
        per_teacher.push(sum / (probes.views.len() * probes.per_view) as f64);
    }
    let average = per_teacher.iter().sum::<f64>() / per_teacher.len() as f64;
    Ok(Preservation { per_teacher, average })
}

/// `model` with every teacher's trigger embedding.
pub fn with_teacher_labels(model: &ToyModel, teachers: &[Teacher]) -> ToyModel {
    let mut m = model.clone();
    for t in teachers {
        m.adopt_labels(&t.model);
    }
    m
}

/// Additive fusion of every teacher's adapters, carrying all triggers.
pub fn additive_fuse_teachers(base: &ToyModel, teachers: &[Teacher]) -> Result<ToyModel> {
    let sets: Vec<AdapterSet> = teachers.iter().map(|t| t.adapters.clone()).collect();
    Ok(with_teacher_labels(&additive_fuse(base, &sets)?, teachers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::ModelSpec;

    fn base() -> ToyModel {
        ToyModel::base(&ModelSpec::default(), 1).unwrap()
    }

    #[test]
    fn aligned_teachers_share_direction() {
        let spec = TeacherSpec {
            divergence: 0.0,
            count: 2,
            ..TeacherSpec::default()
        };
        let t = make_teachers(&base(), &spec).unwrap();
        assert!((mean_pairwise_cosine(&base(), &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn divergent_teachers_are_nearly_orthogonal() {
        for seed in 0..5 {
            let spec = TeacherSpec {
                divergence: 1.0,
                count: 4,
                seed,
                ..TeacherSpec::default()
            };
            let b = base();
            let t = make_teachers(&b, &spec).unwrap();
            let flats: Vec<_> = t.iter().map(|x| flat_delta(&b, &x.adapters).unwrap()).collect();
            for i in 0..4 {
                for j in i + 1..4 {
                    let c = cosine_similarity(&flats[i], &flats[j]).unwrap();
                    assert!(c.abs() < 0.2, "seed {seed} pair {i},{j}: {c}");
                }
            }
        }
    }

    #[test]
    fn strength_sets_relative_norm() {
        let b = base();
        let t = make_teachers(
            &b,
            &TeacherSpec {
                strength: 0.3,
                ..TeacherSpec::default()
            },
        )
        .unwrap();
        for ad in &t[0].adapters.adapters {
            let ratio = lora_delta(ad).unwrap().norm() / b.layer(ad.target_layer()).unwrap().weight.norm();
            assert!((ratio - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn distinct_triggers() {
        let t = make_teachers(
            &base(),
            &TeacherSpec {
                count: 12,
                ..TeacherSpec::default()
            },
        )
        .unwrap();
        let set: std::collections::BTreeSet<_> = t.iter().map(|x| x.trigger.clone()).collect();
        assert_eq!(set.len(), 12);
        assert_eq!(t[0].trigger, "screw");
        assert_eq!(t[11].trigger, "concept_11");
        assert!(make_teachers(
            &base(),
            &TeacherSpec {
                count: 0,
                ..TeacherSpec::default()
            }
        )
        .is_err());
    }

    #[test]
    fn dataset_contract() {
        let t = make_teachers(&base(), &TeacherSpec::default()).unwrap();
        let d = generate_teacher_dataset(&t[0].model, &t[0].trigger, &["front", "up"], 10, 3).unwrap();
        assert_eq!(d.len(), 20);
        assert_eq!(d.records.iter().filter(|r| r.view == "front").count(), 10);
        assert!(d.records.iter().all(|r| r.trigger == "screw"));
        assert_eq!(
            d,
            generate_teacher_dataset(&t[0].model, &t[0].trigger, &["front", "up"], 10, 3).unwrap()
        );
        assert!(matches!(
            generate_teacher_dataset(&t[0].model, "nut", &["front"], 1, 3),
            Err(Error::UnknownTrigger(_))
        ));
        assert!(generate_teacher_dataset(&t[0].model, "screw", &["front"], 0, 3).is_err());
    }

    #[test]
    fn self_preservation_is_one() {
        let t = make_teachers(
            &base(),
            &TeacherSpec {
                count: 3,
                ..TeacherSpec::default()
            },
        )
        .unwrap();
        let p = concept_preservation(&t[1].model, &t[1..2], &ProbeSpec::default()).unwrap();
        assert!((p.per_teacher[0] - 1.0).abs() < 1e-12);
        let fused = with_teacher_labels(&base(), &t);
        let p = concept_preservation(&fused, &t, &ProbeSpec::default()).unwrap();
        assert_eq!(p.per_teacher.len(), 3);
        assert!(p.per_teacher.iter().all(|&s| s < 1.0));
    }
}

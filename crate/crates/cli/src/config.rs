use std::path::Path;

use serde::{Deserialize, Serialize};

use hyperview::diffusion::NoiseSchedule;
use hyperview::hypergraph::{Activation, HgnnParams, HsvThresholds, LossWeights};
use hyperview::lora::{DistillConfig, ModelSpec, ProbeSpec, TeacherSpec};
use hyperview::rng::derive;
use hyperview::synth::{ToyEncoder, ViewKind};

use crate::error::{CliError, CliResult};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "FORGE_SEED";

/// The encoder stands in for a pretrained network, so its weights do not
/// follow the run seed.
pub const ENCODER_SEED: u64 = 0;

// stream tags for seeds derived from the run seed
pub(crate) const TAG_HGNN: u64 = 1;
pub(crate) const TAG_INIT: u64 = 2;
pub(crate) const TAG_OPTIMIZE: u64 = 3;
pub(crate) const TAG_BASE: u64 = 4;
pub(crate) const TAG_TEACHERS: u64 = 5;
pub(crate) const TAG_DATA: u64 = 6;
pub(crate) const TAG_DISTILL: u64 = 7;
pub(crate) const TAG_SCENE: u64 = 8;
pub(crate) const TAG_GRAD: u64 = 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HgnnConfig {
    /// Hyperedge size.
    pub k: usize,
    pub layers: usize,
    /// Hidden width; the latent channel count when absent.
    pub hidden: Option<usize>,
    pub activation: Activation,
}

impl Default for HgnnConfig {
    fn default() -> Self {
        Self {
            k: 8,
            layers: 2,
            hidden: None,
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub resolution: usize,
    pub views: Vec<ViewKind>,
    pub patch: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            views: vec![ViewKind::Front, ViewKind::Up],
            patch: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeConfig {
    pub steps: usize,
    pub lr: f64,
    pub t: usize,
    pub delta_t: usize,
    /// Standard deviation of the noise added to the scene latents to form
    /// the starting point.
    pub init_noise: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.05,
            t: 200,
            delta_t: 100,
            init_noise: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub views: Vec<String>,
    pub samples_per_view: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            views: vec!["front".into(), "up".into()],
            samples_per_view: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    /// `NxHxWxC` latent sizes.
    pub sizes: Vec<String>,
    pub ks: Vec<usize>,
    pub tolerance: f64,
    pub step: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            sizes: vec!["2x4x4x2".into(), "2x8x8x4".into()],
            ks: vec![2, 4, 8],
            tolerance: 1e-4,
            step: 1e-6,
        }
    }
}

/// Every tunable of every command. Missing keys take their defaults and
/// unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub hgnn: HgnnConfig,
    pub loss: LossWeights,
    pub schedule: ScheduleConfig,
    pub scene: SceneConfig,
    pub thresholds: HsvThresholds,
    pub optimize: OptimizeConfig,
    pub model: ModelSpec,
    pub teachers: TeacherSpec,
    pub dataset: DatasetConfig,
    pub distill: DistillConfig,
    pub probes: ProbeSpec,
    pub grad_check: GradCheckConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` (defaults when `None`), then applies `FORGE_SEED`.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut cfg = match path {
            None => Self::default(),
            Some(p) => Self::from_json(&std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?)?,
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        Ok(cfg)
    }

    /// Compact JSON of the effective configuration.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn derived_seed(&self, tag: u64) -> u64 {
        derive(self.seed, tag)
    }

    pub fn schedule(&self) -> CliResult<NoiseSchedule> {
        Ok(NoiseSchedule::linear(
            self.schedule.steps,
            self.schedule.beta_start,
            self.schedule.beta_end,
        )?)
    }

    pub fn encoder(&self) -> CliResult<ToyEncoder> {
        Ok(ToyEncoder::new(self.scene.patch, ENCODER_SEED)?)
    }

    pub fn hgnn_params(&self, channels: usize) -> CliResult<HgnnParams> {
        if self.hgnn.layers == 0 {
            return Err(CliError::Config("hgnn.layers must be >= 1".into()));
        }
        let hidden = self.hgnn.hidden.unwrap_or(channels);
        let mut dims = vec![channels];
        dims.extend(std::iter::repeat_n(hidden, self.hgnn.layers));
        Ok(HgnnParams::seeded(
            &dims,
            self.hgnn.activation,
            self.derived_seed(TAG_HGNN),
        )?)
    }

    pub fn check_resolution(&self, resolution: usize) -> CliResult<()> {
        let p = self.scene.patch;
        if p == 0 || resolution == 0 || !resolution.is_multiple_of(p) {
            return Err(CliError::Config(format!(
                "resolution {resolution} must be a positive multiple of the encoder patch size {p}"
            )));
        }
        Ok(())
    }

    pub fn teacher_spec(&self, count: usize, divergence: Option<f64>) -> TeacherSpec {
        TeacherSpec {
            count,
            divergence: divergence.unwrap_or(self.teachers.divergence),
            seed: self.derived_seed(TAG_TEACHERS),
            ..self.teachers.clone()
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            seed: self.derived_seed(TAG_DISTILL),
            ..self.distill.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::from_json(r#"{"hgnn": {"k": 3}, "loss": {"mvhg": 0.0}}"#).unwrap();
        assert_eq!(c.hgnn.k, 3);
        assert_eq!(c.hgnn.layers, 2);
        assert_eq!(c.loss.ism, 1.0);
        assert_eq!(c.loss.mvhg, 0.0);
        assert_eq!(c.distill, DistillConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"kk": 1}"#), Err(CliError::Config(_))));
        assert!(RunConfig::from_json(r#"{"hgnn": {"size": 1}}"#).is_err());
        // subsystem seeds come from the run seed only
        assert!(RunConfig::from_json(r#"{"distill": {"seed": 1}}"#).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig {
            seed: 17,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_json(&c.echo()).unwrap(), c);
    }

    #[test]
    fn resolution_constraint() {
        let c = RunConfig::default();
        assert!(c.check_resolution(64).is_ok());
        let err = c.check_resolution(60).unwrap_err().to_string();
        assert!(err.contains("patch size 8"), "{err}");
    }
}

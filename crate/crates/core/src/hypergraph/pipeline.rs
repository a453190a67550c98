use serde::{Deserialize, Serialize};

use super::{downsample_mask, hsv_mask, mvhg_loss, HgnnParams, HsvThresholds, LatentMask, MultiViewLatents};
use crate::diffusion::{add_noise, predict_x0, Condition, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::rng::{derive, label_hash, seeded};
use crate::synth::{toy_decode, toy_encode, ToyEncoder};
use crate::tensor::Tensor;

/// How the predicted clean latent is formed from the noisy one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    /// `Z_noisy − ε̂`, without rescaling.
    #[default]
    Literal,
    /// `(Z_noisy − √(1−ᾱ_t)·ε̂) / √ᾱ_t`
    ScaledX0,
}

/// Where the prediction branch's masks come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSource {
    /// HSV mask of the decoded prediction.
    #[default]
    Decoded,
    /// Same masks as the input views.
    Reuse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSpec {
    pub k: usize,
    pub t: usize,
    /// Not read from config files; callers derive it from their own seed.
    #[serde(skip)]
    pub seed: u64,
    pub mode: PredictionMode,
    pub mask_source: MaskSource,
    pub thresholds: HsvThresholds,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        Self {
            k: 8,
            t: 50,
            seed: 0,
            mode: PredictionMode::default(),
            mask_source: MaskSource::default(),
            thresholds: HsvThresholds::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineDiagnostics {
    pub loss: f64,
    pub mode: PredictionMode,
    /// RMS of `(Z_noisy − ε̂) − Z`.
    pub literal_gap_rms: f64,
    /// RMS of the rescaled clean estimate minus `Z`.
    pub scaled_gap_rms: f64,
    pub active_input: usize,
    pub active_pred: usize,
    pub active_union: usize,
    /// PSNR of the decoded prediction against the input views, in dB.
    pub decoded_psnr: f64,
}

fn rms(t: &Tensor) -> f64 {
    (t.norm_sq() / t.len() as f64).sqrt()
}

/// Encode, noise, denoise, predict, mask, and score a batch of views.
///
/// Noise for each view is drawn from a stream keyed by the seed and the
/// view label, so repeated labels see the same draw.
#[allow(clippy::too_many_arguments)]
pub fn mvhg_pipeline(
    images: &[RgbImage],
    labels: &[String],
    cond: &Condition,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    enc: &ToyEncoder,
    params: &HgnnParams,
    spec: &PipelineSpec,
) -> Result<(f64, PipelineDiagnostics)> {
    if images.is_empty() {
        return Err(Error::DegenerateInput("no views".into()));
    }
    let views = images
        .iter()
        .map(|img| toy_encode(img, enc))
        .collect::<Result<Vec<_>>>()?;
    let z = MultiViewLatents::new(views, labels.to_vec())?;
    let (h, w, _) = z.dims();
    let noise = z.map_views(|i, v| {
        let mut rng = seeded(derive(spec.seed, label_hash(&labels[i])));
        Tensor::randn(v.shape(), 1.0, &mut rng)
    })?;

    let z_flat = z.stacked();
    let z_noisy = add_noise(&z_flat, spec.t, &noise.stacked(), sched)?;
    let eps_hat = den.predict(&z_noisy, spec.t, cond)?;
    let literal = z_noisy.sub(&eps_hat)?;
    let scaled = predict_x0(&z_noisy, &eps_hat, spec.t, sched)?;
    let literal_gap_rms = rms(&literal.sub(&z_flat)?);
    let scaled_gap_rms = rms(&scaled.sub(&z_flat)?);
    let z_pred = MultiViewLatents::from_stacked(
        match spec.mode {
            PredictionMode::Literal => &literal,
            PredictionMode::ScaledX0 => &scaled,
        },
        labels.to_vec(),
    )?;

    let mask_of = |img: &RgbImage| downsample_mask(&hsv_mask(img, spec.thresholds), h, w);
    let masks = LatentMask::from_views(&images.iter().map(mask_of).collect::<Result<Vec<_>>>()?)?;
    let decoded = z_pred
        .views()
        .iter()
        .map(|v| toy_decode(v, enc).map(|img| img.clamped()))
        .collect::<Result<Vec<_>>>()?;
    let masks_pred = match spec.mask_source {
        MaskSource::Decoded => LatentMask::from_views(&decoded.iter().map(mask_of).collect::<Result<Vec<_>>>()?)?,
        MaskSource::Reuse => masks.clone(),
    };

    let out = mvhg_loss(&z, &z_pred, &masks, &masks_pred, params, spec.k)?;
    let psnr = decoded
        .iter()
        .zip(images)
        .map(|(d, i)| d.psnr(i))
        .collect::<Result<Vec<_>>>()?;
    let diagnostics = PipelineDiagnostics {
        loss: out.loss,
        mode: spec.mode,
        literal_gap_rms,
        scaled_gap_rms,
        active_input: masks.active_count(),
        active_pred: masks_pred.active_count(),
        active_union: out.active,
        decoded_psnr: psnr.iter().sum::<f64>() / psnr.len() as f64,
    };
    Ok((out.loss, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::GaussianOracle;
    use crate::hypergraph::Activation;
    use crate::synth::{render_views, SceneSpec, ViewKind};

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 1e-4, 2e-2).unwrap()
    }

    fn oracle_for(images: &[RgbImage], enc: &ToyEncoder) -> GaussianOracle {
        let views = images.iter().map(|i| toy_encode(i, enc).unwrap()).collect();
        GaussianOracle::new(MultiViewLatents::unlabeled(views).unwrap().stacked(), sched())
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("view{i}")).collect()
    }

    #[test]
    fn oracle_prediction_recovers_latents_up_to_literal_gap() {
        let enc = ToyEncoder::new(8, 0).unwrap();
        let images = render_views(&SceneSpec::preset("nut").unwrap(), &[ViewKind::Front, ViewKind::Up], 64);
        let oracle = oracle_for(&images, &enc);
        let params = HgnnParams::uniform(4, 2, Activation::Relu, 1).unwrap();
        let spec = PipelineSpec {
            t: 5,
            seed: 3,
            ..PipelineSpec::default()
        };
        let (_, d) = mvhg_pipeline(
            &images,
            &labels(2),
            &Condition::Unconditional,
            &oracle,
            &sched(),
            &enc,
            &params,
            &spec,
        )
        .unwrap();
        assert!(d.scaled_gap_rms < 1e-9, "{}", d.scaled_gap_rms);

        // ε̂ equals the injected noise, so the literal gap is
        // (√ᾱ − 1)·Z + (√(1−ᾱ) − 1)·ε exactly.
        let ab = sched().alpha_bar(5).unwrap();
        let z = MultiViewLatents::unlabeled(images.iter().map(|i| toy_encode(i, &enc).unwrap()).collect()).unwrap();
        let mut sq = 0.0;
        for (i, v) in z.views().iter().enumerate() {
            let mut rng = seeded(derive(3, label_hash(&labels(2)[i])));
            let eps = Tensor::randn(v.shape(), 1.0, &mut rng);
            sq += v
                .zip_map(&eps, |zv, e| (ab.sqrt() - 1.0) * zv + ((1.0 - ab).sqrt() - 1.0) * e)
                .unwrap()
                .norm_sq();
        }
        let want = (sq / z.stacked().len() as f64).sqrt();
        assert!((d.literal_gap_rms - want).abs() < 1e-9 * want.max(1.0));
        assert!(d.literal_gap_rms > 0.1);
    }

    #[test]
    fn scaled_mode_with_oracle_scores_zero_with_reused_masks() {
        let enc = ToyEncoder::new(8, 0).unwrap();
        let images = render_views(
            &SceneSpec::preset("screw").unwrap(),
            &[ViewKind::Front, ViewKind::Up],
            64,
        );
        let oracle = oracle_for(&images, &enc);
        let params = HgnnParams::uniform(4, 2, Activation::Relu, 1).unwrap();
        let spec = PipelineSpec {
            mode: PredictionMode::ScaledX0,
            mask_source: MaskSource::Reuse,
            ..PipelineSpec::default()
        };
        let (loss, _) = mvhg_pipeline(
            &images,
            &labels(2),
            &Condition::Unconditional,
            &oracle,
            &sched(),
            &enc,
            &params,
            &spec,
        )
        .unwrap();
        assert!(loss < 1e-18, "{loss}");
    }

    #[test]
    fn duplicated_views_match_single_view() {
        // tie-free content: random pixels
        let mut rng = seeded(8);
        let img = RgbImage::from_pixels(
            32,
            32,
            (0..1024)
                .map(|_| {
                    let v = Tensor::randn(&[3], 0.2, &mut rng);
                    [0.5 + v.data()[0], 0.4 + v.data()[1], 0.3 + v.data()[2]]
                })
                .collect(),
        )
        .unwrap();
        let enc = ToyEncoder::new(8, 0).unwrap();
        let params = HgnnParams::uniform(4, 2, Activation::Relu, 2).unwrap();
        let cond = Condition::text("screw");
        let k = 3;

        let single = [img.clone()];
        let single_labels = vec!["front".to_string()];
        let spec = PipelineSpec {
            k,
            t: 100,
            seed: 4,
            ..PipelineSpec::default()
        };
        let (l1, _) = mvhg_pipeline(
            &single,
            &single_labels,
            &cond,
            &oracle_for(&single, &enc),
            &sched(),
            &enc,
            &params,
            &spec,
        )
        .unwrap();

        let double = [img.clone(), img];
        let double_labels = vec!["front".to_string(); 2];
        let spec2 = PipelineSpec { k: 2 * k, ..spec };
        let (l2, _) = mvhg_pipeline(
            &double,
            &double_labels,
            &cond,
            &oracle_for(&double, &enc),
            &sched(),
            &enc,
            &params,
            &spec2,
        )
        .unwrap();
        assert!(l1 > 0.0);
        assert!((l1 - l2).abs() <= 1e-12 * l1.max(1.0), "{l1} vs {l2}");
    }

    #[test]
    fn reproducible() {
        let enc = ToyEncoder::new(8, 0).unwrap();
        let images = render_views(
            &SceneSpec::preset("screw").unwrap(),
            &[ViewKind::Front, ViewKind::Up],
            64,
        );
        let oracle = GaussianOracle::new(Tensor::zeros(&[2, 8, 8, 4]), sched());
        let params = HgnnParams::uniform(4, 2, Activation::Relu, 1).unwrap();
        let spec = PipelineSpec {
            seed: 11,
            ..PipelineSpec::default()
        };
        let run = || {
            mvhg_pipeline(
                &images,
                &labels(2),
                &Condition::text("screw"),
                &oracle,
                &sched(),
                &enc,
                &params,
                &spec,
            )
            .unwrap()
        };
        let (a, da) = run();
        let (b, db) = run();
        assert_eq!(a, b);
        assert_eq!(da, db);
        assert!(a > 0.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let enc = ToyEncoder::new(8, 0).unwrap();
        let oracle = GaussianOracle::new(Tensor::zeros(&[1, 1, 1, 4]), sched());
        let params = HgnnParams::uniform(4, 1, Activation::Relu, 1).unwrap();
        assert!(mvhg_pipeline(
            &[],
            &[],
            &Condition::Unconditional,
            &oracle,
            &sched(),
            &enc,
            &params,
            &PipelineSpec::default()
        )
        .is_err());
    }
}

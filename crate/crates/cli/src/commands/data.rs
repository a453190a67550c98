use std::path::PathBuf;

use clap::Args;

use hyperview::hypergraph::{downsample_mask, hsv_mask};
use hyperview::io::{write_fdt, write_ppm};
use hyperview::synth::{EncodedScene, SceneSpec, ViewKind, CATEGORIES};

use crate::config::{RunConfig, TAG_SCENE};
use crate::error::{CliError, CliResult};
use crate::report::ensure_dir;

#[derive(Args, Clone, Debug)]
pub struct GenDataArgs {
    /// Part category, or `random` for a seeded random scene.
    #[arg(long, default_value = "screw")]
    pub scene: String,
    /// Comma-separated view list; the config's views when absent.
    #[arg(long, value_delimiter = ',')]
    pub views: Option<Vec<String>>,
    /// Square image size in pixels; must be a multiple of the encoder patch.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub(crate) fn scene_for(name: &str, cfg: &RunConfig) -> CliResult<SceneSpec> {
    if name == "random" {
        return Ok(SceneSpec::random(cfg.derived_seed(TAG_SCENE)));
    }
    SceneSpec::preset(name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown scene `{name}`; expected `random` or one of {}",
            CATEGORIES.join(", ")
        ))
    })
}

pub(crate) fn parse_views(names: &[String]) -> CliResult<Vec<ViewKind>> {
    if names.is_empty() {
        return Err(CliError::Config("at least one view is required".into()));
    }
    names
        .iter()
        .map(|n| ViewKind::parse(n.trim()).ok_or_else(|| CliError::Config(format!("unknown view `{n}`"))))
        .collect()
}

/// Renders and encodes a scene. Per view `<label>` it writes
/// `view_<label>.ppm` (the image) and `view_<label>.fdt` (its latent).
/// Masks are recomputed from the images by readers, so none are stored.
pub fn gen_data(args: &GenDataArgs, mut cfg: RunConfig) -> CliResult<Vec<PathBuf>> {
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let resolution = args.resolution.unwrap_or(cfg.scene.resolution);
    cfg.check_resolution(resolution)?;
    let views = match &args.views {
        Some(v) => parse_views(v)?,
        None => cfg.scene.views.clone(),
    };
    let scene = scene_for(&args.scene, &cfg)?;
    ensure_dir(&args.out)?;
    let encoded = EncodedScene::render(&scene, &views, resolution, &cfg.encoder()?)?;

    let mut written = Vec::new();
    for ((view, image), latent) in views.iter().zip(&encoded.images).zip(encoded.latents.views()) {
        let ppm = args.out.join(format!("view_{}.ppm", view.as_str()));
        let fdt = args.out.join(format!("view_{}.fdt", view.as_str()));
        write_ppm(&ppm, image)?;
        write_fdt(&fdt, latent)?;
        written.extend([ppm, fdt]);
    }
    Ok(written)
}

/// Latent-resolution foreground grid of an image on disk.
pub(crate) fn mask_from_ppm(
    path: &std::path::Path,
    h: usize,
    w: usize,
    cfg: &RunConfig,
) -> CliResult<hyperview::Tensor> {
    let img = hyperview::io::read_ppm(path)?;
    Ok(downsample_mask(&hsv_mask(&img, cfg.thresholds), h, w)?)
}

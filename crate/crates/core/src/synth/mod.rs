//! Deterministic stand-in for a captured multi-view dataset: flat-shaded
//! primitives on white, rendered from the front and from above, and a
//! fixed linear patch encoder to 4-channel latents.

mod encoder;
mod perturb;
mod scene;

pub use encoder::{toy_decode, toy_encode, ToyEncoder, LATENT_CHANNELS};
pub use perturb::{perturb, Perturbation};
pub use scene::{render_view, render_views, Primitive, SceneSpec, ViewKind, CATEGORIES};

use crate::error::Result;
use crate::hypergraph::{downsample_mask, hsv_mask, HsvThresholds, LatentMask, MultiViewLatents};
use crate::image::RgbImage;

/// Rendered views of a scene with their encoded latents.
#[derive(Clone, Debug)]
pub struct EncodedScene {
    pub images: Vec<RgbImage>,
    pub latents: MultiViewLatents,
}

impl EncodedScene {
    pub fn render(scene: &SceneSpec, views: &[ViewKind], resolution: usize, enc: &ToyEncoder) -> Result<Self> {
        let images = render_views(scene, views, resolution);
        let latents = images
            .iter()
            .map(|img| toy_encode(img, enc))
            .collect::<Result<Vec<_>>>()?;
        let labels = views.iter().map(|v| v.as_str().to_string()).collect();
        Ok(Self {
            images,
            latents: MultiViewLatents::new(latents, labels)?,
        })
    }

    /// Foreground masks of the rendered images at latent resolution.
    pub fn latent_masks(&self, th: HsvThresholds) -> Result<LatentMask> {
        let (h, w, _) = self.latents.dims();
        let grids = self
            .images
            .iter()
            .map(|img| downsample_mask(&hsv_mask(img, th), h, w))
            .collect::<Result<Vec<_>>>()?;
        LatentMask::from_views(&grids)
    }
}

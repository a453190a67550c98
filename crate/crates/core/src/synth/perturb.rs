use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hypergraph::MultiViewLatents;
use crate::rng::seeded;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    /// Adds `magnitude · N(0, 1)` to every element.
    Gaussian,
    /// Adds `magnitude` to every element of one seeded view.
    SingleViewShift,
    /// Scales one seeded channel of every view by `1 + magnitude`.
    ChannelScale,
}

/// Seeded perturbation; a zero magnitude returns the input unchanged.
pub fn perturb(latents: &MultiViewLatents, kind: Perturbation, magnitude: f64, seed: u64) -> Result<MultiViewLatents> {
    if magnitude == 0.0 {
        return Ok(latents.clone());
    }
    let mut rng = seeded(seed);
    match kind {
        Perturbation::Gaussian => latents.map_views(|_, v| {
            let noise = Tensor::randn(v.shape(), magnitude, &mut rng);
            v.add(&noise).expect("same shape")
        }),
        Perturbation::SingleViewShift => {
            let target = rng.random_range(0..latents.n_views());
            latents.map_views(|i, v| {
                if i == target {
                    v.map(|x| x + magnitude)
                } else {
                    v.clone()
                }
            })
        }
        Perturbation::ChannelScale => {
            let (_, _, c) = latents.dims();
            let channel = rng.random_range(0..c);
            latents.map_views(|_, v| {
                let mut out = v.clone();
                for (i, x) in out.data_mut().iter_mut().enumerate() {
                    if i % c == channel {
                        *x *= 1.0 + magnitude;
                    }
                }
                out
            })
        }
    }
}

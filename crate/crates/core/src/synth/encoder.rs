use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::rng::{normal_vec, seeded};
use crate::tensor::Tensor;

pub const LATENT_CHANNELS: usize = 4;

/// Fixed linear patch encoder.
///
/// Each `p × p` RGB patch is flattened row-major (pixel, then channel) and
/// projected onto four orthonormal directions: the per-channel patch means
/// (scaled to unit norm) and one seeded direction orthogonal to them, which
/// responds only to texture inside the patch. Flat-colored patches
/// therefore round-trip exactly through [`toy_decode`].
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    patch: usize,
    seed: u64,
    /// `(p·p·3) × C`
    projection: Tensor,
    /// `C × (p·p·3)`
    pseudo_inverse: Tensor,
}

impl ToyEncoder {
    pub fn new(patch: usize, seed: u64) -> Result<Self> {
        if patch == 0 {
            return Err(Error::InvalidRange("patch size must be >= 1".into()));
        }
        let d = patch * patch * 3;
        let mut cols: Vec<Vec<f64>> = (0..3)
            .map(|ch| {
                (0..d)
                    .map(|i| if i % 3 == ch { 1.0 / patch as f64 } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut rng = seeded(seed);
        // Gram-Schmidt a seeded direction against the channel means; redraw
        // in the (measure-zero) case it collapses.
        let texture = loop {
            let mut v = normal_vec(&mut rng, d);
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-6 {
                break v.into_iter().map(|a| a / norm).collect::<Vec<_>>();
            }
        };
        cols.push(texture);

        let proj = DMatrix::from_fn(d, LATENT_CHANNELS, |i, j| cols[j][i]);
        let gram = proj.transpose() * &proj;
        let inv = gram
            .try_inverse()
            .ok_or_else(|| Error::DegenerateInput("encoder projection is rank deficient".into()))?;
        let pinv = inv * proj.transpose();

        let projection = Tensor::new(
            vec![d, LATENT_CHANNELS],
            (0..d * LATENT_CHANNELS)
                .map(|k| proj[(k / LATENT_CHANNELS, k % LATENT_CHANNELS)])
                .collect(),
        )?;
        let pseudo_inverse = Tensor::new(
            vec![LATENT_CHANNELS, d],
            (0..d * LATENT_CHANNELS).map(|k| pinv[(k / d, k % d)]).collect(),
        )?;
        Ok(Self {
            patch,
            seed,
            projection,
            pseudo_inverse,
        })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &Tensor {
        &self.projection
    }
}

/// `H_img/p × W_img/p × 4` latent of an image.
pub fn toy_encode(image: &RgbImage, enc: &ToyEncoder) -> Result<Tensor> {
    let p = enc.patch;
    let (w, h) = (image.width(), image.height());
    if w % p != 0 || h % p != 0 {
        return Err(Error::IndivisibleShape {
            shape: vec![h, w],
            divisor: vec![p, p],
        });
    }
    let (lh, lw) = (h / p, w / p);
    let proj = enc.projection.data();
    let mut out = vec![0.0; lh * lw * LATENT_CHANNELS];
    for by in 0..lh {
        for bx in 0..lw {
            let slot = &mut out[(by * lw + bx) * LATENT_CHANNELS..(by * lw + bx + 1) * LATENT_CHANNELS];
            for dy in 0..p {
                for dx in 0..p {
                    let px = image.get(bx * p + dx, by * p + dy);
                    for (ch, &val) in px.iter().enumerate() {
                        let row = ((dy * p + dx) * 3 + ch) * LATENT_CHANNELS;
                        for (s, wgt) in slot.iter_mut().zip(&proj[row..row + LATENT_CHANNELS]) {
                            *s += val * wgt;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![lh, lw, LATENT_CHANNELS], out)
}

/// Least-squares reconstruction of an image from an `h × w × 4` latent.
pub fn toy_decode(latent: &Tensor, enc: &ToyEncoder) -> Result<RgbImage> {
    let [lh, lw, c] = latent.shape() else {
        return Err(Error::shape(format!("latent must be H×W×C, got {:?}", latent.shape())));
    };
    if *c != LATENT_CHANNELS {
        return Err(Error::shape(format!(
            "latent has {c} channels, encoder has {LATENT_CHANNELS}"
        )));
    }
    let p = enc.patch;
    let d = p * p * 3;
    let pinv = enc.pseudo_inverse.data();
    let mut img = RgbImage::filled(lw * p, lh * p, [0.0; 3]);
    for by in 0..*lh {
        for bx in 0..*lw {
            let z = &latent.data()[(by * lw + bx) * c..(by * lw + bx + 1) * c];
            for dy in 0..p {
                for dx in 0..p {
                    let mut px = [0.0; 3];
                    for (ch, v) in px.iter_mut().enumerate() {
                        let col = (dy * p + dx) * 3 + ch;
                        *v = z.iter().enumerate().map(|(j, zj)| zj * pinv[j * d + col]).sum();
                    }
                    img.set(bx * p + dx, by * p + dy, px);
                }
            }
        }
    }
    Ok(img)
}

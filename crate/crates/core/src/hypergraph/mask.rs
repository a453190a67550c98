use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::tensor::Tensor;

/// Foreground-on-white thresholds: a pixel is foreground when its
/// saturation exceeds `s_min` or its value falls below `v_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HsvThresholds {
    pub s_min: f64,
    pub v_max: f64,
}

impl Default for HsvThresholds {
    fn default() -> Self {
        Self {
            s_min: 0.15,
            v_max: 0.85,
        }
    }
}

/// `(hue in degrees, saturation, value)` of an RGB triple.
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h, s, max)
}

/// Binary `H × W` foreground mask of an image.
pub fn hsv_mask(image: &RgbImage, th: HsvThresholds) -> Tensor {
    let data = image
        .pixels()
        .iter()
        .map(|&p| {
            let (_, s, v) = rgb_to_hsv(p);
            if s > th.s_min || v < th.v_max {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(vec![image.height(), image.width()], data).expect("image dims are valid")
}

/// Block-max pooling of an `H_img × W_img` mask onto an `h × w` grid.
pub fn downsample_mask(mask: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (mh, mw) = mask.dims2()?;
    if h == 0 || w == 0 || mh < h || mw < w {
        return Err(Error::InvalidRange(format!("cannot pool {mh}x{mw} onto {h}x{w}")));
    }
    if mh % h != 0 || mw % w != 0 {
        return Err(Error::IndivisibleShape {
            shape: vec![mh, mw],
            divisor: vec![h, w],
        });
    }
    let (bh, bw) = (mh / h, mw / w);
    let mut out = vec![0.0; h * w];
    for y in 0..mh {
        for x in 0..mw {
            if mask.data()[y * mw + x] != 0.0 {
                out[(y / bh) * w + x / bw] = 1.0;
            }
        }
    }
    Tensor::new(vec![h, w], out)
}

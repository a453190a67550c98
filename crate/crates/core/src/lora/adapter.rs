use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul, Tensor};

/// Low-rank update `ΔW = (scale / rank) · B · A` for one named layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    target_layer: String,
    /// `d × r`
    b: Tensor,
    /// `r × k`
    a: Tensor,
    scale: f64,
}

impl LoraAdapter {
    pub fn new(target_layer: impl Into<String>, b: Tensor, a: Tensor, scale: f64) -> Result<Self> {
        let (d, r) = b.dims2()?;
        let (ra, k) = a.dims2()?;
        if r != ra {
            return Err(Error::shape(format!("B is {d}x{r} but A is {ra}x{k}")));
        }
        if r > d.min(k) {
            return Err(Error::InvalidRange(format!("rank {r} exceeds min({d}, {k})")));
        }
        if !scale.is_finite() {
            return Err(Error::NonFinite("LoraAdapter::new"));
        }
        Ok(Self {
            target_layer: target_layer.into(),
            b,
            a,
            scale,
        })
    }

    pub fn target_layer(&self) -> &str {
        &self.target_layer
    }

    pub fn b(&self) -> &Tensor {
        &self.b
    }

    pub fn a(&self) -> &Tensor {
        &self.a
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rank(&self) -> usize {
        self.b.shape()[1]
    }

    /// `(d, k)` of the delta.
    pub fn dims(&self) -> (usize, usize) {
        (self.b.shape()[0], self.a.shape()[1])
    }

    pub fn with_scale(&self, scale: f64) -> Self {
        Self { scale, ..self.clone() }
    }
}

pub fn lora_delta(adapter: &LoraAdapter) -> Result<Tensor> {
    let ba = matmul(&adapter.b, &adapter.a)?;
    Ok(ba.scale(adapter.scale / adapter.rank() as f64))
}

/// The adapters one fine-tune contributes, under a name.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterSet {
    pub name: String,
    pub adapters: Vec<LoraAdapter>,
}

impl AdapterSet {
    pub fn new(name: impl Into<String>, adapters: Vec<LoraAdapter>) -> Self {
        Self {
            name: name.into(),
            adapters,
        }
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Self::new(name, Vec::new())
    }
}

/// Adapter metadata as recorded in a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterEntry {
    pub target_layer: String,
    pub rank: usize,
    pub scale: f64,
    pub b_file: String,
    pub a_file: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outer_product_case() {
        let b = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let a = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let ad = LoraAdapter::new("w", b, a, 1.0).unwrap();
        assert_eq!(lora_delta(&ad).unwrap().data(), &[3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn zero_factor_and_scale_linearity() {
        let mut rng = crate::rng::seeded(1);
        let a = Tensor::randn(&[2, 5], 1.0, &mut rng);
        let zero = LoraAdapter::new("w", Tensor::zeros(&[4, 2]), a.clone(), 3.0).unwrap();
        assert!(lora_delta(&zero).unwrap().data().iter().all(|&v| v == 0.0));

        let ad = LoraAdapter::new("w", Tensor::randn(&[4, 2], 1.0, &mut rng), a, 1.5).unwrap();
        let one = lora_delta(&ad).unwrap();
        let two = lora_delta(&ad.with_scale(3.0)).unwrap();
        for (x, y) in one.data().iter().zip(two.data()) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn rank_bound_and_shapes() {
        assert!(LoraAdapter::new("w", Tensor::zeros(&[2, 3]), Tensor::zeros(&[3, 4]), 1.0).is_err());
        assert!(LoraAdapter::new("w", Tensor::zeros(&[4, 2]), Tensor::zeros(&[3, 4]), 1.0).is_err());
    }

    #[test]
    fn delta_rank_is_bounded() {
        let mut rng = crate::rng::seeded(2);
        let ad = LoraAdapter::new(
            "w",
            Tensor::randn(&[6, 2], 1.0, &mut rng),
            Tensor::randn(&[2, 5], 1.0, &mut rng),
            2.0,
        )
        .unwrap();
        let d = lora_delta(&ad).unwrap();
        let p = crate::tensor::pca(&d, 5).unwrap();
        // rows of a rank-2 matrix span at most 2 directions
        assert!(p.explained_variance[2..]
            .iter()
            .all(|&v| v < 1e-10 * p.explained_variance[0]));
    }
}

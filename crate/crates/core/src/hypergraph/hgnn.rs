use serde::{Deserialize, Serialize};

use super::Hypergraph;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::{matmul, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fixed HGNN weights `W^(l)` (`C_l × C_{l+1}`) shared by both loss
/// branches.
#[derive(Clone, Debug, PartialEq)]
pub struct HgnnParams {
    layers: Vec<Tensor>,
    activation: Activation,
    seed: u64,
}

impl HgnnParams {
    pub fn new(layers: Vec<Tensor>, activation: Activation, seed: u64) -> Result<Self> {
        for pair in layers.windows(2) {
            let (_, out) = pair[0].dims2()?;
            let (inp, _) = pair[1].dims2()?;
            if out != inp {
                return Err(Error::shape(format!("layer dims do not chain: {out} -> {inp}")));
            }
        }
        if let Some(l) = layers.last() {
            l.dims2()?;
        }
        Ok(Self {
            layers,
            activation,
            seed,
        })
    }

    /// Gaussian weights with std `1/√C_in` for the width chain `dims`.
    pub fn seeded(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let layers = dims
            .windows(2)
            .map(|w| Tensor::randn(&[w[0], w[1]], 1.0 / (w[0] as f64).sqrt(), &mut rng))
            .collect();
        Self::new(layers, activation, seed)
    }

    /// `layers` layers of width `channels` throughout.
    pub fn uniform(channels: usize, layers: usize, activation: Activation, seed: u64) -> Result<Self> {
        Self::seeded(&vec![channels; layers + 1], activation, seed)
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(|w| w.shape()[0])
    }

    /// Width chain `[C_0, C_1, ...]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|w| w.shape()[0]).collect();
        if let Some(l) = self.layers.last() {
            d.push(l.shape()[1]);
        }
        d
    }
}

/// Mean of each hyperedge's member rows, then the mean over each node's
/// incident hyperedges.
fn aggregate(h: &Hypergraph, x: &Tensor) -> Result<Tensor> {
    let (n, c) = x.dims2()?;
    if n != h.n_nodes() {
        return Err(Error::shape(format!("{n} feature rows for {} nodes", h.n_nodes())));
    }
    let mut edge_means = vec![0.0; h.hyperedges().len() * c];
    for (e, members) in h.hyperedges().iter().enumerate() {
        let slot = &mut edge_means[e * c..(e + 1) * c];
        for &u in members {
            for (s, v) in slot.iter_mut().zip(x.row(u)) {
                *s += v;
            }
        }
        let inv = 1.0 / members.len() as f64;
        slot.iter_mut().for_each(|s| *s *= inv);
    }
    let mut out = vec![0.0; n * c];
    for v in 0..n {
        let slot = &mut out[v * c..(v + 1) * c];
        let inc = h.incident(v);
        for &e in inc {
            for (s, m) in slot.iter_mut().zip(&edge_means[e * c..(e + 1) * c]) {
                *s += m;
            }
        }
        let inv = 1.0 / inc.len() as f64;
        slot.iter_mut().for_each(|s| *s *= inv);
    }
    Tensor::new(vec![n, c], out)
}

/// Transpose of [`aggregate`].
fn aggregate_transpose(h: &Hypergraph, g: &Tensor) -> Result<Tensor> {
    let (n, c) = g.dims2()?;
    let mut edge_grads = vec![0.0; h.hyperedges().len() * c];
    for v in 0..n {
        let inc = h.incident(v);
        let inv = 1.0 / inc.len() as f64;
        for &e in inc {
            for (s, gv) in edge_grads[e * c..(e + 1) * c].iter_mut().zip(g.row(v)) {
                *s += gv * inv;
            }
        }
    }
    let mut out = vec![0.0; n * c];
    for (e, members) in h.hyperedges().iter().enumerate() {
        let inv = 1.0 / members.len() as f64;
        for &u in members {
            for (s, gv) in out[u * c..(u + 1) * c].iter_mut().zip(&edge_grads[e * c..(e + 1) * c]) {
                *s += gv * inv;
            }
        }
    }
    Tensor::new(vec![n, c], out)
}

/// One propagation step: `σ( mean_{e∋v} mean_{u∈e} h_u · W )`.
pub fn hgnn_layer(h: &Hypergraph, x: &Tensor, w: &Tensor, activation: Activation) -> Result<Tensor> {
    let pre = matmul(&aggregate(h, x)?, w)?;
    Ok(pre.map(|v| activation.apply(v)))
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct HgnnTrace {
    pre_activations: Vec<Tensor>,
    pub output: Tensor,
}

pub fn hgnn_forward(h: &Hypergraph, x: &Tensor, p: &HgnnParams) -> Result<Tensor> {
    Ok(hgnn_forward_traced(h, x, p)?.output)
}

pub fn hgnn_forward_traced(h: &Hypergraph, x: &Tensor, p: &HgnnParams) -> Result<HgnnTrace> {
    let (_, c) = x.dims2()?;
    if let Some(d) = p.input_dim() {
        if d != c {
            return Err(Error::shape(format!("HGNN expects {d} channels, got {c}")));
        }
    }
    let mut pre_activations = Vec::with_capacity(p.layers.len());
    let mut cur = x.clone();
    for w in &p.layers {
        let agg = aggregate(h, &cur)?;
        let pre = matmul(&agg, w)?;
        cur = pre.map(|v| p.activation.apply(v));
        pre_activations.push(pre);
    }
    Ok(HgnnTrace {
        pre_activations,
        output: cur,
    })
}

/// Gradient of a scalar with respect to the HGNN input, given its gradient
/// with respect to the output. Structure and weights are constants.
pub fn hgnn_backward(h: &Hypergraph, p: &HgnnParams, trace: &HgnnTrace, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != trace.output.shape() {
        return Err(Error::shape("upstream gradient shape"));
    }
    let mut g = grad_out.clone();
    for (l, w) in p.layers.iter().enumerate().rev() {
        let pre = &trace.pre_activations[l];
        let g_pre = g.zip_map(pre, |gv, pv| gv * p.activation.derivative(pv))?;
        let g_agg = matmul(&g_pre, &w.transpose()?)?;
        g = aggregate_transpose(h, &g_agg)?;
    }
    Ok(g)
}

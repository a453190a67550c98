use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::adapter::{lora_delta, AdapterSet, LoraAdapter};
use crate::error::{Error, Result};
use crate::rng::{derive, label_hash, normal_vec, seeded};
use crate::tensor::{matmul, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Tanh,
    Relu,
    Identity,
}

impl Nonlinearity {
    fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => 1.0 - y * y,
            Nonlinearity::Relu => f64::from(u8::from(y > 0.0)),
            Nonlinearity::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Text,
    Unet,
}

/// Dense layer `y = σ(x · W)` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub weight: Tensor,
    pub activation: Nonlinearity,
}

/// Widths of the toy model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub embed_dim: usize,
    pub text_widths: Vec<usize>,
    pub unet_hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            text_widths: vec![16, 16],
            unet_hidden: vec![32, 32],
            latent_dim: 16,
        }
    }
}

pub const VIEW_TAGS: [&str; 2] = ["front", "up"];

/// Two-token text encoder feeding a dense noise predictor.
///
/// A prompt is the token pair `[trigger, view]`. The text layers act on
/// each token; their mean over tokens, concatenated with the noised
/// latent, is the denoiser input.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    text: Vec<Layer>,
    unet: Vec<Layer>,
    embeddings: BTreeMap<String, Vec<f64>>,
    embed_seed: u64,
}

/// Activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    tokens: Tensor,
    /// Output of each text layer, `tokens × width`.
    pub text_acts: Vec<Tensor>,
    unet_input: Tensor,
    /// Output of each unet layer as a `1 × width` row; the last is `ε̂`.
    pub unet_acts: Vec<Tensor>,
}

impl Trace {
    /// Token-mean of each text layer's output.
    pub fn pooled(&self) -> Vec<Tensor> {
        self.text_acts.iter().map(|a| a.mean_rows().expect("rank 2")).collect()
    }

    pub fn output(&self) -> &Tensor {
        self.unet_acts.last().expect("at least one unet layer")
    }
}

/// Upstream gradients for a [`Trace`]. Missing entries are zero.
#[derive(Clone, Debug, Default)]
pub struct TraceGrad {
    /// Per text layer, gradient w.r.t. the pooled output (length = width).
    pub pooled: Vec<Option<Tensor>>,
    /// Per unet layer, gradient w.r.t. its `1 × width` output.
    pub unet: Vec<Option<Tensor>>,
}

fn tap(v: &[Option<Tensor>], i: usize) -> Option<&Tensor> {
    v.get(i).and_then(Option::as_ref)
}

fn dense(x: &Tensor, layer: &Layer) -> Result<Tensor> {
    let act = layer.activation;
    Ok(matmul(x, &layer.weight)?.map(|v| act.apply(v)))
}

impl ToyModel {
    pub fn from_layers(
        text: Vec<Layer>,
        unet: Vec<Layer>,
        embeddings: BTreeMap<String, Vec<f64>>,
        embed_seed: u64,
    ) -> Result<Self> {
        let mut names = std::collections::BTreeSet::new();
        for l in text.iter().chain(&unet) {
            l.weight.dims2()?;
            if !names.insert(l.name.as_str()) {
                return Err(Error::DegenerateInput(format!("duplicate layer name {}", l.name)));
            }
        }
        if text.is_empty() || unet.is_empty() {
            return Err(Error::DegenerateInput("each stage needs a layer".into()));
        }
        let chain = |layers: &[Layer], first_in: usize| -> Result<usize> {
            let mut width = first_in;
            for l in layers {
                let (i, o) = l.weight.dims2()?;
                if i != width {
                    return Err(Error::shape(format!(
                        "layer {} expects {i} inputs, gets {width}",
                        l.name
                    )));
                }
                width = o;
            }
            Ok(width)
        };
        let embed_dim = text[0].weight.shape()[0];
        let text_out = chain(&text, embed_dim)?;
        let unet_in = unet[0].weight.shape()[0];
        if unet_in <= text_out {
            return Err(Error::shape("unet input leaves no room for the latent"));
        }
        let latent = unet_in - text_out;
        if chain(&unet, unet_in)? != latent {
            return Err(Error::shape("unet output width differs from latent width"));
        }
        if embeddings.values().any(|e| e.len() != embed_dim) {
            return Err(Error::shape("embedding width"));
        }
        Ok(Self {
            text,
            unet,
            embeddings,
            embed_seed,
        })
    }

    /// Seeded base model with the view tags registered.
    pub fn base(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let mut layer = |name: String, i: usize, o: usize, act| Layer {
            name,
            weight: Tensor::randn(&[i, o], 1.0 / (i as f64).sqrt(), &mut rng),
            activation: act,
        };
        let mut text = Vec::new();
        let mut width = spec.embed_dim;
        for (i, &w) in spec.text_widths.iter().enumerate() {
            text.push(layer(format!("text.{i}"), width, w, Nonlinearity::Tanh));
            width = w;
        }
        let mut unet = Vec::new();
        let mut uw = width + spec.latent_dim;
        for (i, &h) in spec.unet_hidden.iter().enumerate() {
            unet.push(layer(format!("unet.{i}"), uw, h, Nonlinearity::Relu));
            uw = h;
        }
        unet.push(layer(
            format!("unet.{}", spec.unet_hidden.len()),
            uw,
            spec.latent_dim,
            Nonlinearity::Identity,
        ));
        let mut model = Self::from_layers(text, unet, BTreeMap::new(), derive(seed, 0xE3B))?;
        for tag in VIEW_TAGS {
            model.register_label(tag);
        }
        Ok(model)
    }

    /// Adds a label's embedding, derived from the model's embedding seed
    /// and the label, if absent.
    pub fn register_label(&mut self, label: &str) {
        let dim = self.embed_dim();
        let seed = derive(self.embed_seed, label_hash(label));
        self.embeddings
            .entry(label.to_string())
            .or_insert_with(|| normal_vec(&mut seeded(seed), dim));
    }

    /// Copies embeddings this model lacks from `other`.
    pub fn adopt_labels(&mut self, other: &ToyModel) {
        for (k, v) in &other.embeddings {
            self.embeddings.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.text[0].weight.shape()[0]
    }

    pub fn latent_dim(&self) -> usize {
        self.unet.last().expect("validated").weight.shape()[1]
    }

    pub fn embed_seed(&self) -> u64 {
        self.embed_seed
    }

    pub fn text_layers(&self) -> &[Layer] {
        &self.text
    }

    pub fn unet_layers(&self) -> &[Layer] {
        &self.unet
    }

    pub fn embeddings(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.embeddings
    }

    pub fn embedding(&self, label: &str) -> Result<&[f64]> {
        self.embeddings
            .get(label)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownTrigger(label.to_string()))
    }

    /// Layers of both stages, text first.
    pub fn layers(&self) -> impl Iterator<Item = (Stage, &Layer)> {
        self.text
            .iter()
            .map(|l| (Stage::Text, l))
            .chain(self.unet.iter().map(|l| (Stage::Unet, l)))
    }

    pub fn layer(&self, name: &str) -> Result<&Layer> {
        self.layers()
            .map(|(_, l)| l)
            .find(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn layer_mut(&mut self, name: &str) -> Result<&mut Layer> {
        self.text
            .iter_mut()
            .chain(self.unet.iter_mut())
            .find(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        let sig = |m: &Self| {
            m.layers()
                .map(|(s, l)| (s, l.name.clone(), l.weight.shape().to_vec(), l.activation))
                .collect::<Vec<_>>()
        };
        sig(self) == sig(other)
    }

    pub fn trace(&self, trigger: &str, view: &str, x_t: &[f64]) -> Result<Trace> {
        if x_t.len() != self.latent_dim() {
            return Err(Error::shape(format!(
                "latent of length {} for width {}",
                x_t.len(),
                self.latent_dim()
            )));
        }
        let mut tokens = self.embedding(trigger)?.to_vec();
        tokens.extend_from_slice(self.embedding(view)?);
        let tokens = Tensor::new(vec![2, self.embed_dim()], tokens)?;
        let mut text_acts = Vec::with_capacity(self.text.len());
        let mut h = tokens.clone();
        for l in &self.text {
            h = dense(&h, l)?;
            text_acts.push(h.clone());
        }
        let mut input = h.mean_rows()?.into_data();
        input.extend_from_slice(x_t);
        let unet_input = Tensor::new(vec![1, input.len()], input)?;
        let mut unet_acts = Vec::with_capacity(self.unet.len());
        let mut u = unet_input.clone();
        for l in &self.unet {
            u = dense(&u, l)?;
            unet_acts.push(u.clone());
        }
        Ok(Trace {
            tokens,
            text_acts,
            unet_input,
            unet_acts,
        })
    }

    /// Noise prediction for prompt `(trigger, view)` at noised latent `x_t`.
    pub fn predict(&self, trigger: &str, view: &str, x_t: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(trigger, view, x_t)?.output().data().to_vec())
    }

    /// Weight gradients for every layer, text then unet, given upstream
    /// gradients on the trace's taps.
    pub fn backward(&self, trace: &Trace, grad: &TraceGrad) -> Result<Vec<Tensor>> {
        let mut unet_grads = vec![None; self.unet.len()];
        let mut g = Tensor::zeros(&[1, self.latent_dim()]);
        for (m, layer) in self.unet.iter().enumerate().rev() {
            if let Some(t) = tap(&grad.unet, m) {
                g = g.add(&t.clone().reshape(g.shape().to_vec())?)?;
            }
            let act = &trace.unet_acts[m];
            let dz = g.zip_map(act, |gv, y| gv * layer.activation.slope_from_output(y))?;
            let input = if m == 0 {
                &trace.unet_input
            } else {
                &trace.unet_acts[m - 1]
            };
            unet_grads[m] = Some(matmul(&input.transpose()?, &dz)?);
            g = matmul(&dz, &layer.weight.transpose()?)?;
        }
        let text_out = self.text.last().expect("validated").weight.shape()[1];
        let n_tokens = trace.tokens.shape()[0];
        // pooled-gradient of the last text layer from the unet path
        let mut pooled_grad = Tensor::new(vec![text_out], g.data()[..text_out].to_vec())?;
        let mut text_grads = vec![None; self.text.len()];
        let mut gt: Option<Tensor> = None;
        for (l, layer) in self.text.iter().enumerate().rev() {
            if let Some(t) = tap(&grad.pooled, l) {
                pooled_grad = pooled_grad.add(t)?;
            }
            let act = &trace.text_acts[l];
            let width = act.shape()[1];
            let spread = pooled_grad.scale(1.0 / n_tokens as f64);
            let mut full = Tensor::new(vec![n_tokens, width], spread.data().repeat(n_tokens))?;
            if let Some(prev) = gt.take() {
                full = full.add(&prev)?;
            }
            let dz = full.zip_map(act, |gv, y| gv * layer.activation.slope_from_output(y))?;
            let input = if l == 0 { &trace.tokens } else { &trace.text_acts[l - 1] };
            text_grads[l] = Some(matmul(&input.transpose()?, &dz)?);
            gt = Some(matmul(&dz, &layer.weight.transpose()?)?);
            pooled_grad = Tensor::zeros(&[input.shape()[1]]);
        }
        Ok(text_grads
            .into_iter()
            .chain(unet_grads)
            .map(|g| g.expect("filled"))
            .collect())
    }

    /// Applies `W ← W − lr · g` to the layers of `stage` (or all when `None`).
    /// `grads` is ordered like [`ToyModel::layers`].
    pub fn descend(&mut self, grads: &[Tensor], lr: f64, stage: Option<Stage>) -> Result<()> {
        let n_text = self.text.len();
        for (i, g) in grads.iter().enumerate() {
            let (layer, st) = if i < n_text {
                (&mut self.text[i], Stage::Text)
            } else {
                (&mut self.unet[i - n_text], Stage::Unet)
            };
            if stage.is_none_or(|s| s == st) {
                layer.weight.axpy(-lr, g)?;
            }
        }
        Ok(())
    }

    /// All weights flattened in layer order.
    pub fn flat_weights(&self) -> Vec<f64> {
        self.layers()
            .flat_map(|(_, l)| l.weight.data().iter().copied())
            .collect()
    }

    /// `self − base`, flattened in layer order.
    pub fn delta_from(&self, base: &Self) -> Result<Vec<f64>> {
        if !self.same_architecture(base) {
            return Err(Error::shape("models differ in architecture"));
        }
        Ok(self
            .flat_weights()
            .iter()
            .zip(base.flat_weights())
            .map(|(a, b)| a - b)
            .collect())
    }
}

fn check_target(base: &ToyModel, ad: &LoraAdapter) -> Result<()> {
    let layer = base.layer(ad.target_layer())?;
    let (i, o) = layer.weight.dims2()?;
    if ad.dims() != (i, o) {
        return Err(Error::shape(format!(
            "adapter for {} is {:?}, layer is {i}x{o}",
            ad.target_layer(),
            ad.dims()
        )));
    }
    Ok(())
}

/// Total delta per layer, summed in an order that depends only on the
/// adapters' content, so the result is independent of input order.
fn summed_deltas<'a>(
    base: &ToyModel,
    adapters: impl Iterator<Item = &'a LoraAdapter>,
) -> Result<BTreeMap<String, Tensor>> {
    let mut per_layer: BTreeMap<String, Vec<Tensor>> = BTreeMap::new();
    for ad in adapters {
        check_target(base, ad)?;
        per_layer
            .entry(ad.target_layer().to_string())
            .or_default()
            .push(lora_delta(ad)?);
    }
    per_layer
        .into_iter()
        .map(|(name, mut deltas)| {
            deltas.sort_by(|a, b| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let mut total = deltas[0].clone();
            for d in &deltas[1..] {
                total = total.add(d)?;
            }
            Ok((name, total))
        })
        .collect()
}

/// `W ← W + Σ ΔW` for every layer the set targets.
pub fn merge(base: &ToyModel, set: &AdapterSet) -> Result<ToyModel> {
    additive_fuse(base, std::slice::from_ref(set))
}

/// Naive fusion: every adapter of every set added onto the base weights.
pub fn additive_fuse(base: &ToyModel, sets: &[AdapterSet]) -> Result<ToyModel> {
    let totals = summed_deltas(base, sets.iter().flat_map(|s| &s.adapters))?;
    let mut out = base.clone();
    for (name, delta) in totals {
        let layer = out.layer_mut(&name)?;
        layer.weight = layer.weight.add(&delta)?;
    }
    Ok(out)
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `N` views of `H × W × C` latent grids with a label per view.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewLatents {
    views: Vec<Tensor>,
    labels: Vec<String>,
}

impl MultiViewLatents {
    pub fn new(views: Vec<Tensor>, labels: Vec<String>) -> Result<Self> {
        let first = views.first().ok_or_else(|| Error::DegenerateInput("no views".into()))?;
        if first.rank() != 3 {
            return Err(Error::shape(format!("view must be H×W×C, got {:?}", first.shape())));
        }
        if let Some(bad) = views.iter().find(|v| v.shape() != first.shape()) {
            return Err(Error::shape(format!(
                "view shapes differ: {:?} vs {:?}",
                first.shape(),
                bad.shape()
            )));
        }
        if labels.len() != views.len() {
            return Err(Error::shape(format!(
                "{} labels for {} views",
                labels.len(),
                views.len()
            )));
        }
        Ok(Self { views, labels })
    }

    /// Views labelled `view0`, `view1`, ...
    pub fn unlabeled(views: Vec<Tensor>) -> Result<Self> {
        let labels = (0..views.len()).map(|i| format!("view{i}")).collect();
        Self::new(views, labels)
    }

    /// Splits an `N × H × W × C` tensor into views.
    pub fn from_stacked(stacked: &Tensor, labels: Vec<String>) -> Result<Self> {
        let [n, h, w, c] = stacked.shape() else {
            return Err(Error::shape(format!("expected N×H×W×C, got {:?}", stacked.shape())));
        };
        let per = h * w * c;
        let views = (0..*n)
            .map(|i| Tensor::new(vec![*h, *w, *c], stacked.data()[i * per..(i + 1) * per].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(views, labels)
    }

    pub fn stacked(&self) -> Tensor {
        let (h, w, c) = self.dims();
        let data = self.views.iter().flat_map(|v| v.data().iter().copied()).collect();
        Tensor::new(vec![self.views.len(), h, w, c], data).expect("views validated at construction")
    }

    pub fn views(&self) -> &[Tensor] {
        &self.views
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    /// `(H, W, C)` shared by every view.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.views[0].shape();
        (s[0], s[1], s[2])
    }

    pub fn n_nodes(&self) -> usize {
        let (h, w, _) = self.dims();
        self.views.len() * h * w
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.views.len() == other.views.len() && self.dims() == other.dims()
    }

    /// Reorders views (and labels) by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.views.len() {
            return Err(Error::shape("permutation length"));
        }
        Self::new(
            order.iter().map(|&i| self.views[i].clone()).collect(),
            order.iter().map(|&i| self.labels[i].clone()).collect(),
        )
    }

    pub fn map_views(&self, mut f: impl FnMut(usize, &Tensor) -> Tensor) -> Result<Self> {
        Self::new(
            self.views.iter().enumerate().map(|(i, v)| f(i, v)).collect(),
            self.labels.clone(),
        )
    }
}

/// `(N·H·W) × C` node feature matrix, view-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures {
    matrix: Tensor,
}

impl NodeFeatures {
    pub fn from_matrix(matrix: Tensor) -> Result<Self> {
        matrix.dims2()?;
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn into_matrix(self) -> Tensor {
        self.matrix
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.matrix.shape()[1]
    }
}

/// Flattens and concatenates the views into one node per latent position.
pub fn build_node_features(latents: &MultiViewLatents) -> NodeFeatures {
    let (_, _, c) = latents.dims();
    let matrix = latents
        .stacked()
        .reshape(vec![latents.n_nodes(), c])
        .expect("stacked views flatten to nodes");
    NodeFeatures { matrix }
}

/// Per-view binary grids at latent resolution, stored `N × H × W` so the
/// flat layout matches node order.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMask {
    grid: Tensor,
}

impl LatentMask {
    /// Builds from per-view `H × W` grids; any nonzero value is active.
    pub fn from_views(views: &[Tensor]) -> Result<Self> {
        let first = views
            .first()
            .ok_or_else(|| Error::DegenerateInput("no mask views".into()))?;
        let (h, w) = first.dims2()?;
        if views.iter().any(|v| v.shape() != [h, w]) {
            return Err(Error::shape("mask views differ in shape"));
        }
        let data = views
            .iter()
            .flat_map(|v| v.data().iter().map(|&x| if x != 0.0 { 1.0 } else { 0.0 }))
            .collect();
        Ok(Self {
            grid: Tensor::new(vec![views.len(), h, w], data)?,
        })
    }

    pub fn all_active(n_views: usize, h: usize, w: usize) -> Self {
        Self {
            grid: Tensor::filled(&[n_views, h, w], 1.0),
        }
    }

    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    /// Per-node activity flags in node order.
    pub fn node_flags(&self) -> Vec<bool> {
        self.grid.data().iter().map(|&v| v != 0.0).collect()
    }

    pub fn active_count(&self) -> usize {
        self.grid.data().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn matches(&self, latents: &MultiViewLatents) -> bool {
        let (h, w, _) = latents.dims();
        self.grid.shape() == [latents.n_views(), h, w]
    }

    pub fn view(&self, i: usize) -> Tensor {
        let s = self.grid.shape();
        let per = s[1] * s[2];
        Tensor::new(vec![s[1], s[2]], self.grid.data()[i * per..(i + 1) * per].to_vec()).expect("in-range view")
    }

    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let views: Vec<Tensor> = order.iter().map(|&i| self.view(i)).collect();
        Self::from_views(&views)
    }
}

//! Cross-view hypergraph consistency: node features from multi-view
//! latents, top-k cosine hyperedges, HGNN propagation, the masked feature
//! loss with its analytic gradient, the end-to-end loss pipeline and the
//! latent optimization loop built on the combined objective.

mod graph;
mod hgnn;
mod latents;
mod loss;
mod mask;
mod optimize;
mod pipeline;

pub use graph::{build_hypergraph, Hypergraph};
pub use hgnn::{hgnn_backward, hgnn_forward, hgnn_forward_traced, hgnn_layer, Activation, HgnnParams, HgnnTrace};
pub use latents::{build_node_features, LatentMask, MultiViewLatents, NodeFeatures};
pub use loss::{mvhg_loss, mvhg_loss_with_structure, MvhgOutput, MvhgStructure};
pub use mask::{downsample_mask, hsv_mask, rgb_to_hsv, HsvThresholds};
pub use optimize::{optimize_latents, total_loss, LossWeights, OptimizeOutcome, OptimizeSpec, StepRecord};
pub use pipeline::{mvhg_pipeline, MaskSource, PipelineDiagnostics, PipelineSpec, PredictionMode};

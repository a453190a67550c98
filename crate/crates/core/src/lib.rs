//! Multi-view consistency and multi-adapter fusion on a toy diffusion stack.
//!
//! The crate covers four pieces that compose into small, fully
//! deterministic experiments:
//!
//! * [`diffusion`]: noise schedules, a closed-form Gaussian denoiser, and
//!   score/interval distillation losses over it.
//! * [`hypergraph`]: feature-similarity hypergraphs over multi-view latents,
//!   a fixed HGNN, and the masked feature-matching loss with its gradient.
//! * [`lora`]: a tiny text-encoder + denoiser model, low-rank adapters,
//!   additive fusion and two-stage distillation of several adapters into
//!   one student.
//! * [`synth`]: rendered primitives and a linear patch encoder standing in
//!   for captured views and a pretrained autoencoder.
//!
//! ```
//! use hyperview::hypergraph::{build_hypergraph, build_node_features, MultiViewLatents};
//! use hyperview::Tensor;
//!
//! let views = vec![Tensor::filled(&[2, 2, 3], 1.0), Tensor::filled(&[2, 2, 3], 2.0)];
//! let latents = MultiViewLatents::unlabeled(views)?;
//! let graph = build_hypergraph(&build_node_features(&latents), 3)?;
//! assert_eq!(graph.hyperedges().len(), 8);
//! # Ok::<(), hyperview::Error>(())
//! ```

pub mod diffusion;
pub mod error;
pub mod hypergraph;
pub mod image;
pub mod io;
pub mod lora;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use image::RgbImage;
pub use tensor::Tensor;

//! The chapters of `book/` as modules, so `cargo test -p hyperview-book`
//! compiles and runs every Rust snippet in the guide.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tensors.md")]
pub mod tensors {}

#[doc = include_str!("../../../book/src/synthetic.md")]
pub mod synthetic {}

#[doc = include_str!("../../../book/src/hypergraphs.md")]
pub mod hypergraphs {}

#[doc = include_str!("../../../book/src/diffusion.md")]
pub mod diffusion {}

#[doc = include_str!("../../../book/src/optimize.md")]
pub mod optimize {}

#[doc = include_str!("../../../book/src/adapters.md")]
pub mod adapters {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

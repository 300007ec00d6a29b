//! Deterministic laboratory for attention-sink experiments on a toy
//! diffusion transformer.
//!
//! The crate is organized as a stack: [`numerics`] supplies the tensor type,
//! the counter-based RNG, and stable softmax; [`toymodel`] builds and runs the
//! joint-attention denoiser; [`probe`] computes attention-concentration
//! measurements; [`intervene`] implements the attention-processor hook and the
//! sink intervention itself; [`proxymetrics`] scores outputs; [`stats`] does
//! paired bootstrap/t inference. Everything downstream of a (seed, config)
//! pair is bit-reproducible: no global RNG, no HashMap iteration order, fixed
//! accumulation order in every reduction.

pub mod error;
pub mod intervene;
pub mod numerics;
pub mod probe;
pub mod proxymetrics;
pub mod stats;
pub mod toymodel;

pub use error::{Error, Result};

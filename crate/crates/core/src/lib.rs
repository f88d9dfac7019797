//! Supervised score-based regression.
//!
//! A conditional score network is trained with denoising score matching over a
//! geometric noise schedule. Prediction runs noise-free Langevin refinement from
//! the largest noise level to the smallest, switching levels early once the
//! scaled score falls under a per-level end-signal.
//!
//! Module map:
//!
//! - [`nn`]: dense layers, activations, manual backprop, Adam/AMSGrad.
//! - [`schedule`]: geometric noise levels and derived step sizes.
//! - [`model`]: the gated score network, the frozen conditioner and checkpoints.
//! - [`train`]: denoising score matching training and network-error estimation.
//! - [`infer`]: the refinement sampler and batch prediction.
//! - [`theory`]: closed forms and bounds for the refinement dynamics, with a randomized verifier.
//! - [`data`]: toy generators, CSV ingestion, standardization and splits.
//! - [`report`]: run configuration, metrics, ablation grid, step tables and SVG scatter plots.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod infer;
pub mod model;
pub mod nn;
pub mod report;
pub mod schedule;
pub mod theory;
pub mod train;

pub use error::{Error, Result};

pub(crate) fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

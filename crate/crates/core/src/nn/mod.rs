//! Feed-forward network machinery: dense layers, activations, a taped MLP with
//! manual backpropagation, and the Adam/AMSGrad optimizers.
//!
//! Batches are row-major: one sample per row. All arithmetic is `f64`.

mod activation;
mod dense;
mod mlp;
mod optim;

pub use activation::{softplus, softplus_with_slope, Activation};
pub use dense::{DenseGrad, DenseLayer};
pub use mlp::{Mlp, MlpGradients, MlpTape};
pub use optim::{OptimizerKind, OptimizerState};

/// Gradients for a parameter set, one flat block per parameter tensor, in the
/// same order as the owning model's `parameters()`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    blocks: Vec<Vec<f64>>,
}

impl GradientBundle {
    pub fn new(blocks: Vec<Vec<f64>>) -> Self {
        Self { blocks }
    }

    pub fn zeros_like(lens: &[usize]) -> Self {
        Self {
            blocks: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.blocks
    }

    pub fn into_blocks(self) -> Vec<Vec<f64>> {
        self.blocks
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().flatten().fold(0.0, |m, g| m.max(g.abs()))
    }

    /// Concatenation of all blocks.
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }
}

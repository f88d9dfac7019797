use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{self, Result};
use crate::nn::{Activation, DenseLayer, Mlp, MlpGradients, MlpTape};

pub const PRETRAIN_HIDDEN: [usize; 2] = [100, 50];
pub const LEAKY_SLOPE: f64 = 0.01;

/// Point predictor `f(x)` whose output conditions the score network.
///
/// Once frozen, the parameters can no longer be borrowed mutably.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainNet {
    net: Mlp,
    frozen: bool,
}

impl PretrainNet {
    /// Two leaky-ReLU hidden layers (100 and 50 units) and a linear head.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, rng: &mut R) -> Result<Self> {
        Self::with_hidden(input_dim, output_dim, &PRETRAIN_HIDDEN, rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return error::config("pretrain network dimensions must be positive");
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let layers = dims.windows(2).map(|w| DenseLayer::init(w[0], w[1], rng)).collect();
        Ok(Self {
            net: Mlp::new(layers, activations(hidden.len()))?,
            frozen: false,
        })
    }

    pub fn from_layers(layers: Vec<DenseLayer>, frozen: bool) -> Result<Self> {
        let n = layers.len();
        if n == 0 {
            return error::config("pretrain network needs at least one layer");
        }
        Ok(Self {
            net: Mlp::new(layers, activations(n - 1))?,
            frozen,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        self.net.layers()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.predict(x)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| crate::Error::Shape(e.to_string()))?;
        Ok(self.predict(row.view())?.iter().copied().collect())
    }

    pub(crate) fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpTape)> {
        self.net.forward(x)
    }

    pub(crate) fn backward(&self, tape: &MlpTape, upstream: ArrayView2<f64>) -> Result<MlpGradients> {
        self.net.backward(tape, upstream)
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        self.net.parameters()
    }

    pub fn parameter_lens(&self) -> Vec<usize> {
        self.net.parameter_lens()
    }

    pub(crate) fn parameters_mut(&mut self) -> Result<Vec<&mut [f64]>> {
        if self.frozen {
            return error::config("pretrain network is frozen");
        }
        Ok(self.net.parameters_mut())
    }
}

fn activations(hidden_layers: usize) -> Vec<Activation> {
    let mut acts = vec![Activation::LeakyRelu(LEAKY_SLOPE); hidden_layers];
    acts.push(Activation::Identity);
    acts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_output() {
        let layers = vec![
            DenseLayer::zeros(2, 100),
            DenseLayer::zeros(100, 50),
            DenseLayer::zeros(50, 1),
        ];
        let net = PretrainNet::from_layers(layers, true).unwrap();
        assert_eq!(net.predict_one(&[1.5, -2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn frozen_repeat_calls_are_identical() {
        let mut rng = crate::seeded_rng(4);
        let mut net = PretrainNet::init(3, 2, &mut rng).unwrap();
        net.freeze();
        let a = net.predict_one(&[0.1, 0.2, 0.3]).unwrap();
        let b = net.predict_one(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(a, b);
        assert!(net.parameters_mut().is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = crate::seeded_rng(4);
        let net = PretrainNet::init(3, 1, &mut rng).unwrap();
        assert!(net.predict_one(&[0.1]).is_err());
    }
}

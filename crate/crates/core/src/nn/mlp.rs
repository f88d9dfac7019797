use ndarray::{Array2, ArrayView2, Zip};

use super::{Activation, DenseLayer, GradientBundle};
use crate::error::{self, Error, Result};

/// A stack of dense layers, each followed by its own activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    activations: Vec<Activation>,
}

/// Intermediates cached by [`Mlp::forward`] for backpropagation.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre_activations: Vec<Array2<f64>>,
}

/// Result of [`Mlp::backward`]: parameter gradients in `parameters()` order
/// (weights then bias, layer by layer) and the gradient with respect to the input.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub params: GradientBundle,
    pub input: Array2<f64>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return error::config("an MLP needs at least one layer");
        }
        if layers.len() != activations.len() {
            return error::config(format!(
                "{} layers but {} activations",
                layers.len(),
                activations.len()
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return error::shape(format!(
                    "layer output {} does not feed next layer input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                ));
            }
        }
        Ok(Self {
            layers,
            activations,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, MlpTape)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = input.to_owned();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let pre = layer.forward(current.view())?;
            let post = pre.mapv(|v| act.apply(v));
            inputs.push(current);
            pre_activations.push(pre);
            current = post;
        }
        Ok((
            current,
            MlpTape {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Forward pass without keeping a tape.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut current = input.to_owned();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let mut pre = layer.forward(current.view())?;
            pre.mapv_inplace(|v| act.apply(v));
            current = pre;
        }
        Ok(current)
    }

    /// Backpropagates `upstream = dL/d(output)` through the taped forward pass.
    pub fn backward(&self, tape: &MlpTape, upstream: ArrayView2<f64>) -> Result<MlpGradients> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::Internal(format!(
                "tape has {} layers, network has {}",
                tape.inputs.len(),
                self.layers.len()
            )));
        }
        for (layer, (inp, pre)) in self
            .layers
            .iter()
            .zip(tape.inputs.iter().zip(&tape.pre_activations))
        {
            if inp.ncols() != layer.in_dim() || pre.ncols() != layer.out_dim() {
                return Err(Error::Internal(
                    "tape does not match network shapes".to_string(),
                ));
            }
        }
        let last = &tape.pre_activations[self.layers.len() - 1];
        if upstream.dim() != last.dim() {
            return error::shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                last.dim()
            ));
        }

        let mut blocks = vec![Vec::new(); 2 * self.layers.len()];
        let mut grad = upstream.to_owned();
        for idx in (0..self.layers.len()).rev() {
            let act = self.activations[idx];
            Zip::from(&mut grad)
                .and(&tape.pre_activations[idx])
                .for_each(|g, &z| *g *= act.derivative(z));
            let (layer_grad, grad_in) = self.layers[idx].backward(tape.inputs[idx].view(), grad.view())?;
            blocks[2 * idx] = layer_grad.weights.iter().copied().collect();
            blocks[2 * idx + 1] = layer_grad.bias.iter().copied().collect();
            grad = grad_in;
        }
        Ok(MlpGradients {
            params: GradientBundle::new(blocks),
            input: grad,
        })
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights_slice(), l.bias_slice()])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            let (w, b) = layer.slices_mut();
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn parameter_lens(&self) -> Vec<usize> {
        self.parameters().iter().map(|p| p.len()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    fn single() -> Mlp {
        Mlp::new(
            vec![DenseLayer::new(array![[2.0]], array![1.0]).unwrap()],
            vec![Activation::Identity],
        )
        .unwrap()
    }

    #[test]
    fn single_layer_forward() {
        let (out, _) = single().forward(array![[3.0]].view()).unwrap();
        assert_eq!(out, array![[7.0]]);
    }

    #[test]
    fn zero_softplus_network_outputs_ln2() {
        let net = Mlp::new(
            vec![DenseLayer::zeros(3, 4), DenseLayer::zeros(4, 2)],
            vec![Activation::Softplus, Activation::Softplus],
        )
        .unwrap();
        let out = net.predict(array![[1.0, -2.0, 0.5]].view()).unwrap();
        for v in out.iter() {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn half_squared_norm_gradient() {
        // L = 0.5 * out^2, out = 7 at x = 3, so dL/dW = out * x = 21.
        let net = single();
        let (out, tape) = net.forward(array![[3.0]].view()).unwrap();
        let grads = net.backward(&tape, out.view()).unwrap();
        assert_eq!(grads.params.blocks()[0], vec![21.0]);
        assert_eq!(grads.params.blocks()[1], vec![7.0]);
        assert_eq!(grads.input, array![[14.0]]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = crate::seeded_rng(1);
        let net = Mlp::new(
            vec![DenseLayer::init(2, 5, &mut rng), DenseLayer::init(5, 1, &mut rng)],
            vec![Activation::Softplus, Activation::Identity],
        )
        .unwrap();
        let (_, tape) = net.forward(array![[0.3, -0.7]].view()).unwrap();
        let grads = net.backward(&tape, Array2::zeros((1, 1)).view()).unwrap();
        assert_eq!(grads.params.max_abs(), 0.0);
        assert!(grads.input.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mismatched_tape_is_internal_error() {
        let mut rng = crate::seeded_rng(2);
        let deep = Mlp::new(
            vec![DenseLayer::init(1, 3, &mut rng), DenseLayer::init(3, 1, &mut rng)],
            vec![Activation::Softplus, Activation::Identity],
        )
        .unwrap();
        let (_, tape) = single().forward(array![[1.0]].view()).unwrap();
        let err = deep.backward(&tape, array![[1.0]].view()).unwrap_err();
        assert!(matches!(err, Error::Internal(_)));
    }

    #[test]
    fn rejects_wrong_input_dim() {
        assert!(single().forward(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn two_layer_golden_output() {
        // Hand-evaluated: h = softplus([1*0.5 - 0.25, -1*0.5 + 0.1]) = softplus([0.25, -0.4]),
        // out = 1.5*h0 - 2*h1 + 0.3.
        let l1 = DenseLayer::new(array![[1.0], [-1.0]], array![-0.25, 0.1]).unwrap();
        let l2 = DenseLayer::new(array![[1.5, -2.0]], Array1::from(vec![0.3])).unwrap();
        let net = Mlp::new(vec![l1, l2], vec![Activation::Softplus, Activation::Identity]).unwrap();
        let out = net.predict(array![[0.5]].view()).unwrap();
        let h0 = (1.0f64 + 0.25f64.exp()).ln();
        let h1 = (1.0f64 + (-0.4f64).exp()).ln();
        let expected = 1.5 * h0 - 2.0 * h1 + 0.3;
        assert!((out[[0, 0]] - expected).abs() < 1e-14);
        assert!((out[[0, 0]] - 0.5128786250183601).abs() < 1e-14);
    }
}

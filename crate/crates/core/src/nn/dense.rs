use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{self, Result};

/// Affine map `y = W x + b` with `W` stored as `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

/// Gradients of a scalar loss with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return error::shape(format!(
                "weights have {} rows but bias has {} entries",
                weights.nrows(),
                bias.len()
            ));
        }
        if !weights.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return error::config("dense layer parameters must be finite");
        }
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    /// Weights and bias drawn from `U(-1/sqrt(in_dim), 1/sqrt(in_dim))`.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weights = Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng));
        let bias = Array1::from_shape_simple_fn(out_dim, || dist.sample(rng));
        Self { weights, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    /// Mutable weight and bias storage, in that order.
    pub(crate) fn slices_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        )
    }

    pub(crate) fn weights_slice(&self) -> &[f64] {
        self.weights.as_slice().expect("standard layout")
    }

    pub(crate) fn bias_slice(&self) -> &[f64] {
        self.bias.as_slice().expect("standard layout")
    }

    /// Applies the layer to every row of `input`.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.in_dim() {
            return error::shape(format!(
                "dense layer expects {} inputs, got {}",
                self.in_dim(),
                input.ncols()
            ));
        }
        let mut out = input.dot(&self.weights.t());
        out += &self.bias;
        Ok(out)
    }

    /// Given the layer input and `dL/d(output)`, returns the parameter gradients
    /// summed over rows and `dL/d(input)`.
    pub fn backward(
        &self,
        input: ArrayView2<f64>,
        grad_out: ArrayView2<f64>,
    ) -> Result<(DenseGrad, Array2<f64>)> {
        if input.ncols() != self.in_dim()
            || grad_out.ncols() != self.out_dim()
            || input.nrows() != grad_out.nrows()
        {
            return error::shape(format!(
                "dense backward: input {:?}, upstream {:?}, layer {}x{}",
                input.dim(),
                grad_out.dim(),
                self.out_dim(),
                self.in_dim()
            ));
        }
        let weights = grad_out.t().dot(&input);
        let bias = grad_out.sum_axis(Axis(0));
        let grad_in = grad_out.dot(&self.weights);
        Ok((DenseGrad { weights, bias }, grad_in))
    }
}

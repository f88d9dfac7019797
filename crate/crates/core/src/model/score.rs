//! The gated conditional score network.
//!
//! ```text
//! u   = x ⊕ y ⊕ f(x)
//! h1  = softplus((W1 u  + b1) ⊙ e1[i])
//! h2  = softplus((W2 h1 + b2) ⊙ e2[i])
//! h3  = softplus((W3 h2 + b3) ⊙ e3[i])
//! out = W4 h3 + b4
//! ```
//!
//! `e1`, `e2`, `e3` are learned `(levels, hidden)` embedding tables indexed by
//! the noise level `i`; softplus is applied after the gate.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{self, Error, Result};
use crate::nn::{softplus, softplus_with_slope, DenseLayer, GradientBundle};

pub const DEFAULT_HIDDEN: usize = 128;

/// Gate index for [`ScoreModel::noise_embedding`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    First,
    Second,
    Third,
}

impl Gate {
    fn index(self) -> usize {
        match self {
            Gate::First => 0,
            Gate::Second => 1,
            Gate::Third => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    input_dim: usize,
    output_dim: usize,
    levels: usize,
    hidden: usize,
    hidden_layers: [DenseLayer; 3],
    embeddings: [Array2<f64>; 3],
    head: DenseLayer,
}

/// Cached intermediates of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ScoreTape {
    levels: Vec<usize>,
    input: Array2<f64>,
    /// Affine output of each hidden layer before gating.
    affine: [Array2<f64>; 3],
    /// Softplus slope at the gated pre-activation of each hidden layer.
    slope: [Array2<f64>; 3],
    hidden: [Array2<f64>; 3],
}

/// Gradients in `parameters()` order plus the gradient with respect to `y`.
#[derive(Debug, Clone)]
pub struct ScoreGradients {
    pub params: GradientBundle,
    pub y: Array2<f64>,
}

impl ScoreModel {
    /// Dense layers use `U(±1/sqrt(in_dim))`; embedding rows are drawn from `U(0, 1)`.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        levels: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_dims(input_dim, output_dim, levels, hidden)?;
        let in1 = input_dim + 2 * output_dim;
        let l1 = DenseLayer::init(in1, hidden, rng);
        let l2 = DenseLayer::init(hidden, hidden, rng);
        let l3 = DenseLayer::init(hidden, hidden, rng);
        let head = DenseLayer::init(hidden, output_dim, rng);
        let unit = Uniform::new(0.0, 1.0).expect("valid range");
        let mut table = || Array2::from_shape_simple_fn((levels, hidden), || unit.sample(rng));
        let embeddings = [table(), table(), table()];
        Ok(Self {
            input_dim,
            output_dim,
            levels,
            hidden,
            hidden_layers: [l1, l2, l3],
            embeddings,
            head,
        })
    }

    pub fn zeros(input_dim: usize, output_dim: usize, levels: usize, hidden: usize) -> Result<Self> {
        Self::check_dims(input_dim, output_dim, levels, hidden)?;
        let in1 = input_dim + 2 * output_dim;
        Ok(Self {
            input_dim,
            output_dim,
            levels,
            hidden,
            hidden_layers: [
                DenseLayer::zeros(in1, hidden),
                DenseLayer::zeros(hidden, hidden),
                DenseLayer::zeros(hidden, hidden),
            ],
            embeddings: [
                Array2::zeros((levels, hidden)),
                Array2::zeros((levels, hidden)),
                Array2::zeros((levels, hidden)),
            ],
            head: DenseLayer::zeros(hidden, output_dim),
        })
    }

    fn check_dims(input_dim: usize, output_dim: usize, levels: usize, hidden: usize) -> Result<()> {
        if input_dim == 0 || output_dim == 0 || levels == 0 || hidden == 0 {
            return error::config(format!(
                "score model dims must be positive (m={input_dim}, d={output_dim}, L={levels}, hidden={hidden})"
            ));
        }
        Ok(())
    }

    /// Rebuilds a model from parameter blocks in `parameters()` order.
    pub fn from_blocks(
        input_dim: usize,
        output_dim: usize,
        levels: usize,
        hidden: usize,
        blocks: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut model = Self::zeros(input_dim, output_dim, levels, hidden)?;
        let expected = model.parameter_lens();
        if blocks.len() != expected.len() {
            return error::shape(format!(
                "expected {} parameter blocks, got {}",
                expected.len(),
                blocks.len()
            ));
        }
        for ((dst, src), len) in model.parameters_mut().into_iter().zip(&blocks).zip(&expected) {
            if src.len() != *len {
                return error::shape(format!("parameter block of {} values, expected {len}", src.len()));
            }
            if !src.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("score model parameter".into()));
            }
            dst.copy_from_slice(src);
        }
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn noise_embedding(&self, level: usize, gate: Gate) -> Result<ArrayView1<'_, f64>> {
        if level >= self.levels {
            return error::config(format!(
                "noise level {level} out of range for {} levels",
                self.levels
            ));
        }
        Ok(self.embeddings[gate.index()].row(level))
    }

    /// Names matching `parameters()`.
    pub fn parameter_names() -> [&'static str; 11] {
        [
            "g1.weight", "g1.bias", "embed1", "g2.weight", "g2.bias", "embed2", "g3.weight",
            "g3.bias", "embed3", "g4.weight", "g4.bias",
        ]
    }

    pub fn parameter_shapes(&self) -> Vec<Vec<usize>> {
        let h = self.hidden;
        vec![
            vec![h, self.input_dim + 2 * self.output_dim],
            vec![h],
            vec![self.levels, h],
            vec![h, h],
            vec![h],
            vec![self.levels, h],
            vec![h, h],
            vec![h],
            vec![self.levels, h],
            vec![self.output_dim, h],
            vec![self.output_dim],
        ]
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(11);
        for k in 0..3 {
            out.push(self.hidden_layers[k].weights_slice());
            out.push(self.hidden_layers[k].bias_slice());
            out.push(self.embeddings[k].as_slice().expect("standard layout"));
        }
        out.push(self.head.weights_slice());
        out.push(self.head.bias_slice());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(11);
        for (layer, table) in self.hidden_layers.iter_mut().zip(self.embeddings.iter_mut()) {
            let (w, b) = layer.slices_mut();
            out.push(w);
            out.push(b);
            out.push(table.as_slice_mut().expect("standard layout"));
        }
        let (w, b) = self.head.slices_mut();
        out.push(w);
        out.push(b);
        out
    }

    pub fn parameter_lens(&self) -> Vec<usize> {
        self.parameters().iter().map(|p| p.len()).collect()
    }

    fn check_batch(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        cond: ArrayView2<f64>,
        levels: &[usize],
    ) -> Result<()> {
        let n = y.nrows();
        if x.ncols() != self.input_dim || y.ncols() != self.output_dim || cond.ncols() != self.output_dim {
            return error::shape(format!(
                "score model expects x:{} y:{} f(x):{} columns, got {} {} {}",
                self.input_dim,
                self.output_dim,
                self.output_dim,
                x.ncols(),
                y.ncols(),
                cond.ncols()
            ));
        }
        if x.nrows() != n || cond.nrows() != n || levels.len() != n {
            return error::shape("score model batch rows disagree");
        }
        if let Some(&bad) = levels.iter().find(|&&l| l >= self.levels) {
            return error::config(format!("noise level {bad} out of range for {} levels", self.levels));
        }
        Ok(())
    }

    fn gates(&self, k: usize, levels: &[usize]) -> Array2<f64> {
        self.embeddings[k].select(Axis(0), levels)
    }

    /// Batched forward pass; `levels[r]` is the noise level of row `r`.
    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        cond: ArrayView2<f64>,
        levels: &[usize],
    ) -> Result<(Array2<f64>, ScoreTape)> {
        self.check_batch(x, y, cond, levels)?;
        let input = concatenate(Axis(1), &[x, y, cond]).map_err(|e| Error::Shape(e.to_string()))?;
        let mut affine: Vec<Array2<f64>> = Vec::with_capacity(3);
        let mut slope: Vec<Array2<f64>> = Vec::with_capacity(3);
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(3);
        for k in 0..3 {
            let prev = if k == 0 { input.view() } else { hidden[k - 1].view() };
            let z = self.hidden_layers[k].forward(prev)?;
            let mut h = &z * &self.gates(k, levels);
            let mut s = Array2::<f64>::zeros(h.raw_dim());
            Zip::from(&mut h).and(&mut s).for_each(|v, d| (*v, *d) = softplus_with_slope(*v));
            affine.push(z);
            slope.push(s);
            hidden.push(h);
        }
        let out = self.head.forward(hidden[2].view())?;
        let tape = ScoreTape {
            levels: levels.to_vec(),
            input,
            affine: into_array3(affine),
            slope: into_array3(slope),
            hidden: into_array3(hidden),
        };
        Ok((out, tape))
    }

    /// Forward pass with every row at the same level, without a tape.
    pub fn predict_level(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        cond: ArrayView2<f64>,
        level: usize,
    ) -> Result<Array2<f64>> {
        let levels = vec![level; y.nrows()];
        self.check_batch(x, y, cond, &levels)?;
        let mut current =
            concatenate(Axis(1), &[x, y, cond]).map_err(|e| Error::Shape(e.to_string()))?;
        for k in 0..3 {
            let mut z = self.hidden_layers[k].forward(current.view())?;
            let gate = self.embeddings[k].row(level);
            Zip::from(z.rows_mut()).for_each(|mut row| {
                Zip::from(&mut row).and(&gate).for_each(|v, &e| *v = softplus(*v * e));
            });
            current = z;
        }
        self.head.forward(current.view())
    }

    /// Single-sample score `s(y, sigma_level, x)` given the conditioner output `f(x)`.
    pub fn score(
        &self,
        y: &[f64],
        level: usize,
        x: &[f64],
        cond: &[f64],
    ) -> Result<Vec<f64>> {
        let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec());
        let (xa, ya, ca) = (
            row(x).map_err(|e| Error::Shape(e.to_string()))?,
            row(y).map_err(|e| Error::Shape(e.to_string()))?,
            row(cond).map_err(|e| Error::Shape(e.to_string()))?,
        );
        let out = self.predict_level(xa.view(), ya.view(), ca.view(), level)?;
        Ok(out.iter().copied().collect::<Vec<f64>>())
    }

    /// Backpropagates `upstream = dL/d(out)` through a taped forward pass.
    pub fn backward(&self, tape: &ScoreTape, upstream: ArrayView2<f64>) -> Result<ScoreGradients> {
        let n = tape.levels.len();
        if upstream.dim() != (n, self.output_dim)
            || tape.input.ncols() != self.input_dim + 2 * self.output_dim
            || tape.hidden[2].ncols() != self.hidden
        {
            return Err(Error::Internal("score tape does not match model".into()));
        }
        let mut blocks: Vec<Vec<f64>> = vec![Vec::new(); 11];
        let (head_grad, mut grad_h) = self.head.backward(tape.hidden[2].view(), upstream)?;
        blocks[9] = head_grad.weights.iter().copied().collect();
        blocks[10] = head_grad.bias.iter().copied().collect();

        let mut grad_input = Array2::zeros((0, 0));
        for k in (0..3).rev() {
            // d/d(gated) through softplus.
            let mut grad_g = grad_h;
            grad_g *= &tape.slope[k];
            let gates = self.gates(k, &tape.levels);
            let grad_z = &grad_g * &gates;
            let mut grad_table = Array2::<f64>::zeros((self.levels, self.hidden));
            let contrib = &grad_g * &tape.affine[k];
            for (r, &lvl) in tape.levels.iter().enumerate() {
                let mut dst = grad_table.row_mut(lvl);
                dst += &contrib.row(r);
            }
            let layer_input = if k == 0 { tape.input.view() } else { tape.hidden[k - 1].view() };
            let (layer_grad, below) = self.hidden_layers[k].backward(layer_input, grad_z.view())?;
            blocks[3 * k] = layer_grad.weights.iter().copied().collect();
            blocks[3 * k + 1] = layer_grad.bias.iter().copied().collect();
            blocks[3 * k + 2] = grad_table.iter().copied().collect();
            if k == 0 {
                grad_input = below;
                grad_h = Array2::zeros((0, 0));
            } else {
                grad_h = below;
            }
        }
        let m = self.input_dim;
        let y = grad_input.slice(s![.., m..m + self.output_dim]).to_owned();
        Ok(ScoreGradients {
            params: GradientBundle::new(blocks),
            y,
        })
    }

    /// Bias of the output head.
    pub fn head_bias(&self) -> &Array1<f64> {
        self.head.bias()
    }
}

fn into_array3(v: Vec<Array2<f64>>) -> [Array2<f64>; 3] {
    let mut it = v.into_iter();
    [
        it.next().expect("three layers"),
        it.next().expect("three layers"),
        it.next().expect("three layers"),
    ]
}

//! First-order optimizers.
//!
//! With gradient `g`, step `t` (1-based after increment), rates `b1`, `b2`:
//!
//! ```text
//! m_t = b1 * m_{t-1} + (1 - b1) * g
//! v_t = b2 * v_{t-1} + (1 - b2) * g^2
//!
//! Adam:    theta -= lr * (m_t / (1 - b1^t)) / (sqrt(v_t / (1 - b2^t)) + eps)
//! AMSGrad: vmax_t = max(vmax_{t-1}, v_t)
//!          theta -= lr * m_t / (sqrt(vmax_t) + eps)      (no bias correction)
//! Sgd:     theta -= lr * g                               (moments unused)
//! ```
//!
//! The first AMSGrad step with `g = 1`, `lr = 1e-3` therefore moves by
//! `-1e-3 * 0.1 / sqrt(0.001) ≈ -3.162e-3`.

use crate::error::{Error, Result};

use super::GradientBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    AmsGrad,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::Adam),
            "amsgrad" => Ok(Self::AmsGrad),
            "sgd" => Ok(Self::Sgd),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::AmsGrad => "amsgrad",
            Self::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    /// Running elementwise maximum of `second_moment`; empty for Adam.
    pub max_second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    /// Zeroed state for parameter blocks of the given lengths, with
    /// `beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-8`.
    pub fn new(kind: OptimizerKind, block_lens: &[usize], learning_rate: f64) -> Self {
        let zeros = || block_lens.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Self {
            kind,
            first_moment: zeros(),
            second_moment: zeros(),
            max_second_moment: match kind {
                OptimizerKind::AmsGrad => zeros(),
                OptimizerKind::Adam | OptimizerKind::Sgd => Vec::new(),
            },
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Applies one update in place. Parameters and state are left untouched if
    /// any gradient is non-finite or shapes disagree.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &GradientBundle) -> Result<()> {
        let blocks = grads.blocks();
        if params.len() != blocks.len() || params.len() != self.first_moment.len() {
            return Err(Error::Shape(format!(
                "optimizer has {} blocks, params {}, grads {}",
                self.first_moment.len(),
                params.len(),
                blocks.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(blocks).zip(&self.first_moment) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Shape(format!(
                    "block length mismatch: param {}, grad {}, state {}",
                    p.len(),
                    g.len(),
                    m.len()
                )));
            }
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient at optimizer step {}",
                self.step_count + 1
            )));
        }

        self.step_count += 1;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
        match self.kind {
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (bi, (p, g)) in params.iter_mut().zip(blocks).enumerate() {
                    let m = &mut self.first_moment[bi];
                    let v = &mut self.second_moment[bi];
                    for j in 0..p.len() {
                        m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                        v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                        p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(blocks) {
                    for (p, g) in p.iter_mut().zip(g) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::AmsGrad => {
                for (bi, (p, g)) in params.iter_mut().zip(blocks).enumerate() {
                    let m = &mut self.first_moment[bi];
                    let v = &mut self.second_moment[bi];
                    let vmax = &mut self.max_second_moment[bi];
                    for j in 0..p.len() {
                        m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                        v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                        vmax[j] = vmax[j].max(v[j]);
                        p[j] -= lr * m[j] / (vmax[j].sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

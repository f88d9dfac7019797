//! Refinement sampler.
//!
//! For every non-final level `i` the iterate is moved by `y += alpha_i * s(y, i, x)`
//! with `alpha_i = epsilon * sigma_i^2 / sigma_L^2`. In fast mode a level ends as
//! soon as the score at the new iterate satisfies
//! `sigma_i^2 * ||s||_inf < beta_i`, or after `step_cap` steps; otherwise every
//! non-final level runs exactly `step_cap` steps. The last level always runs
//! exactly `last_steps` steps with step size `epsilon` and no end-signal.
//!
//! The end-signal is tested on the score computed at the post-step iterate, and
//! that same score drives the next step, so a level costs one score evaluation
//! per step plus one at entry.
//!
//! The noisy variant replaces the update with annealed Langevin dynamics,
//! `y += c * alpha_i * s + sqrt(alpha_i) * z` with `c = 1/2` by default.

use std::time::{Duration, Instant};

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::data::argmax_rows;
use crate::error::{self, Error, Result};
use crate::model::{PretrainNet, ScoreModel};
use crate::schedule::{EndSignalSet, NoiseSchedule, RefinementParams};

/// A conditional score field evaluated in batches.
pub trait ScoreFunction {
    fn output_dim(&self) -> usize;

    /// Per-row conditioning, computed once per input batch.
    fn context(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// Scores at `level` for iterates `ys` with the matching context rows.
    fn score(&self, ys: ArrayView2<f64>, level: usize, ctx: ArrayView2<f64>) -> Result<Array2<f64>>;
}

/// Exact score of `N(y_I, sigma_i^2 I)`: `(y_I - y) / sigma_i^2`.
///
/// The "inputs" handed to [`infer`] are the targets `y_I` themselves.
#[derive(Debug, Clone)]
pub struct GaussianScoreOracle {
    sigmas: Vec<f64>,
    dim: usize,
}

impl GaussianScoreOracle {
    pub fn new(schedule: &NoiseSchedule, dim: usize) -> Self {
        Self {
            sigmas: schedule.sigmas().to_vec(),
            dim,
        }
    }
}

impl ScoreFunction for GaussianScoreOracle {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn context(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.dim {
            return error::shape("oracle targets must have the output dimension");
        }
        Ok(xs.to_owned())
    }

    fn score(&self, ys: ArrayView2<f64>, level: usize, ctx: ArrayView2<f64>) -> Result<Array2<f64>> {
        let var = self.sigmas[level] * self.sigmas[level];
        Ok((&ctx - &ys).mapv(|v| v / var))
    }
}

/// The trained score network conditioned on the frozen predictor's output.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalScore<'a> {
    pub model: &'a ScoreModel,
    pub conditioner: &'a PretrainNet,
}

impl ScoreFunction for ConditionalScore<'_> {
    fn output_dim(&self) -> usize {
        self.model.output_dim()
    }

    fn context(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let cond = self.conditioner.predict(xs)?;
        concatenate(Axis(1), &[xs, cond.view()]).map_err(|e| Error::Shape(e.to_string()))
    }

    fn score(&self, ys: ArrayView2<f64>, level: usize, ctx: ArrayView2<f64>) -> Result<Array2<f64>> {
        let m = self.model.input_dim();
        self.model
            .predict_level(ctx.slice(s![.., ..m]), ys, ctx.slice(s![.., m..]), level)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitPolicy {
    /// Start from the given mean of the training targets.
    TargetMean(Vec<f64>),
    Zeros,
    Custom(Vec<f64>),
}

/// Score coefficient of the noisy update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisyScoreCoef {
    /// `alpha / 2`, as in annealed Langevin dynamics.
    Half,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub epsilon: f64,
    /// Steps at the last level.
    pub last_steps: usize,
    /// Cap on steps at every other level.
    pub step_cap: usize,
    pub end_signals: EndSignalSet,
    pub use_noise: bool,
    pub fast: bool,
    pub y0: InitPolicy,
    /// Seed of the Gaussian draws in the noisy variant.
    pub seed: u64,
    pub noisy_coef: NoisyScoreCoef,
    pub record_iterates: bool,
}

impl InferenceConfig {
    /// Noise-free fast sampling with `beta_i = gamma * sigma_i`.
    pub fn new(schedule: &NoiseSchedule, epsilon: f64, last_steps: usize, step_cap: usize, gamma: f64) -> Result<Self> {
        Ok(Self {
            epsilon,
            last_steps,
            step_cap,
            end_signals: EndSignalSet::proportional(schedule, gamma)?,
            use_noise: false,
            fast: true,
            y0: InitPolicy::Zeros,
            seed: 0,
            noisy_coef: NoisyScoreCoef::Half,
            record_iterates: false,
        })
    }

    fn initial(&self, dim: usize) -> Result<Vec<f64>> {
        let v = match &self.y0 {
            InitPolicy::Zeros => vec![0.0; dim],
            InitPolicy::TargetMean(v) | InitPolicy::Custom(v) => v.clone(),
        };
        if v.len() != dim {
            return error::shape(format!("initial iterate has {} values, expected {dim}", v.len()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitReason {
    EndSignal,
    Cap,
}

impl ExitReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitReason::EndSignal => "end_signal",
            ExitReason::Cap => "cap",
        }
    }
}

/// What happened while refining one input.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    /// Steps taken at each level.
    pub steps: Vec<usize>,
    pub exits: Vec<ExitReason>,
    /// Iterates after every step, per level (only when recording was requested).
    pub iterates: Option<Vec<Vec<Vec<f64>>>>,
    /// Wall time of the inference call that produced this trace.
    pub wall: Duration,
    pub prediction: Vec<f64>,
}

impl PredictionTrace {
    pub fn total_steps(&self) -> usize {
        self.steps.iter().sum()
    }
}

/// `y + alpha * score`.
pub fn refine_step(y: &[f64], score: &[f64], alpha: f64) -> Vec<f64> {
    y.iter().zip(score).map(|(y, s)| y + alpha * s).collect()
}

/// `y + (alpha / 2) * score + sqrt(alpha) * z`.
pub fn noisy_step(y: &[f64], score: &[f64], alpha: f64, z: &[f64]) -> Vec<f64> {
    noisy_step_with(y, score, alpha, z, NoisyScoreCoef::Half)
}

pub fn noisy_step_with(y: &[f64], score: &[f64], alpha: f64, z: &[f64], coef: NoisyScoreCoef) -> Vec<f64> {
    let c = match coef {
        NoisyScoreCoef::Half => 0.5 * alpha,
        NoisyScoreCoef::Full => alpha,
    };
    let root = alpha.sqrt();
    y.iter()
        .zip(score)
        .zip(z)
        .map(|((y, s), z)| y + c * s + root * z)
        .collect()
}

/// `sigma^2 * ||score||_inf < beta` (strict).
pub fn end_signal_met(score: &[f64], sigma: f64, beta: f64) -> bool {
    let norm = score.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    sigma * sigma * norm < beta
}

struct RowState {
    steps: Vec<usize>,
    exits: Vec<ExitReason>,
    iterates: Option<Vec<Vec<Vec<f64>>>>,
}

struct Refiner<'a> {
    score: &'a dyn ScoreFunction,
    schedule: &'a NoiseSchedule,
    config: &'a InferenceConfig,
    params: RefinementParams,
    ctx: Array2<f64>,
    y: Array2<f64>,
    rows: Vec<RowState>,
    rng: rand_chacha::ChaCha8Rng,
    started: Instant,
}

impl Refiner<'_> {
    fn update(&mut self, active: &[usize], scores: &Array2<f64>, level: usize) -> Result<()> {
        let alpha = self.params.alphas[level];
        let d = self.y.ncols();
        let mut z = vec![0.0; d];
        for (k, &r) in active.iter().enumerate() {
            let cur = self.y.row(r).to_vec();
            let s = scores.row(k).to_vec();
            let next = if self.config.use_noise {
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(&mut self.rng);
                }
                noisy_step_with(&cur, &s, alpha, &z, self.config.noisy_coef)
            } else {
                refine_step(&cur, &s, alpha)
            };
            let state = &mut self.rows[r];
            state.steps[level] += 1;
            if let Some(it) = state.iterates.as_mut() {
                it[level].push(next.clone());
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(self.diverged(r, level));
            }
            self.y.row_mut(r).assign(&ndarray::ArrayView1::from(&next));
        }
        Ok(())
    }

    fn diverged(&self, row: usize, level: usize) -> Error {
        let state = &self.rows[row];
        Error::InferenceDiverged {
            row,
            level,
            step: state.steps[level],
            trace: Box::new(PredictionTrace {
                steps: state.steps.clone(),
                exits: state.exits.clone(),
                iterates: state.iterates.clone(),
                wall: self.started.elapsed(),
                prediction: self.y.row(row).to_vec(),
            }),
        }
    }

    fn eval(&self, active: &[usize], level: usize) -> Result<Array2<f64>> {
        if active.len() == self.y.nrows() {
            return self.score.score(self.y.view(), level, self.ctx.view());
        }
        let ys = self.y.select(Axis(0), active);
        let cs = self.ctx.select(Axis(0), active);
        self.score.score(ys.view(), level, cs.view())
    }

    fn run_level(&mut self, level: usize) -> Result<()> {
        let n = self.y.nrows();
        let last = level + 1 == self.schedule.len();
        let mut active: Vec<usize> = (0..n).collect();
        let budget = if last { self.params.last_steps } else { self.params.step_cap };
        let use_signal = self.config.fast && !last;
        let sigma = self.schedule.sigma(level);
        let beta = self.config.end_signals.betas[level];

        let mut scores = self.eval(&active, level)?;
        for step in 1..=budget {
            self.update(&active, &scores, level)?;
            if step == budget {
                break;
            }
            scores = self.eval(&active, level)?;
            if use_signal {
                let mut keep = Vec::with_capacity(active.len());
                let mut keep_rows = Vec::with_capacity(active.len());
                for (k, &r) in active.iter().enumerate() {
                    let s = scores.row(k);
                    if end_signal_met(s.as_slice().expect("contiguous row"), sigma, beta) {
                        self.rows[r].exits[level] = ExitReason::EndSignal;
                    } else {
                        keep.push(r);
                        keep_rows.push(k);
                    }
                }
                if keep.is_empty() {
                    break;
                }
                if keep.len() != active.len() {
                    scores = scores.select(Axis(0), &keep_rows);
                    active = keep;
                }
            }
        }
        Ok(())
    }
}

/// Refines every row of `xs` through all levels.
///
/// Rows are processed in lockstep but each row follows exactly the per-row
/// schedule: its own end-signal decisions and step counts.
pub fn infer_batch(
    score: &dyn ScoreFunction,
    xs: ArrayView2<f64>,
    schedule: &NoiseSchedule,
    config: &InferenceConfig,
) -> Result<(Array2<f64>, Vec<PredictionTrace>)> {
    let started = Instant::now();
    let d = score.output_dim();
    let levels = schedule.len();
    if config.end_signals.betas.len() != levels {
        return error::config(format!(
            "{} end-signals for {levels} levels",
            config.end_signals.betas.len()
        ));
    }
    let params = RefinementParams::new(schedule, config.epsilon, config.last_steps, config.step_cap)?;
    let y0 = config.initial(d)?;
    let n = xs.nrows();
    let ctx = score.context(xs)?;
    let y = Array2::from_shape_fn((n, d), |(_, j)| y0[j]);
    let rows = (0..n)
        .map(|_| RowState {
            steps: vec![0; levels],
            exits: vec![ExitReason::Cap; levels],
            iterates: config.record_iterates.then(|| vec![Vec::new(); levels]),
        })
        .collect();
    let mut refiner = Refiner {
        score,
        schedule,
        config,
        params,
        ctx,
        y,
        rows,
        rng: crate::seeded_rng(config.seed),
        started,
    };
    if n > 0 {
        for level in 0..levels {
            refiner.run_level(level)?;
        }
    }
    let wall = started.elapsed();
    let traces = refiner
        .rows
        .into_iter()
        .enumerate()
        .map(|(r, st)| PredictionTrace {
            steps: st.steps,
            exits: st.exits,
            iterates: st.iterates,
            wall,
            prediction: refiner.y.row(r).to_vec(),
        })
        .collect();
    Ok((refiner.y, traces))
}

/// Single-input refinement.
pub fn infer(
    score: &dyn ScoreFunction,
    x: &[f64],
    schedule: &NoiseSchedule,
    config: &InferenceConfig,
) -> Result<(Vec<f64>, PredictionTrace)> {
    let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    let (_, mut traces) = infer_batch(score, xs, schedule, config)?;
    let trace = traces.pop().expect("one row");
    Ok((trace.prediction.clone(), trace))
}

#[derive(Debug, Clone)]
pub struct BatchPrediction {
    /// Mean prediction over repeats, one row per input.
    pub mean: Array2<f64>,
    /// Traces per repeat, per row.
    pub traces: Vec<Vec<PredictionTrace>>,
    /// Wall time of each repeat.
    pub wall_times: Vec<Duration>,
}

impl BatchPrediction {
    /// Argmax of the mean prediction, for classification.
    pub fn labels(&self) -> Vec<usize> {
        argmax_rows(self.mean.view())
    }

    pub fn mean_wall(&self) -> Duration {
        let total: Duration = self.wall_times.iter().sum();
        total / self.wall_times.len().max(1) as u32
    }

    pub fn median_wall(&self) -> Duration {
        let mut w = self.wall_times.clone();
        w.sort_unstable();
        w.get(w.len() / 2).copied().unwrap_or_default()
    }

    pub fn all_traces(&self) -> impl Iterator<Item = &PredictionTrace> {
        self.traces.iter().flatten()
    }
}

/// Runs [`infer_batch`] `repeats` times (repeat `r` seeds the noise with
/// `config.seed + r`) and averages the predictions row by row.
pub fn predict_batch(
    score: &dyn ScoreFunction,
    xs: ArrayView2<f64>,
    schedule: &NoiseSchedule,
    config: &InferenceConfig,
    repeats: usize,
) -> Result<BatchPrediction> {
    if repeats == 0 {
        return error::config("repeats must be at least 1");
    }
    let mut sum = Array2::<f64>::zeros((xs.nrows(), score.output_dim()));
    let mut traces = Vec::with_capacity(repeats);
    let mut wall_times = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(r as u64);
        let started = Instant::now();
        let (preds, tr) = infer_batch(score, xs, schedule, &cfg)?;
        wall_times.push(started.elapsed());
        sum += &preds;
        traces.push(tr);
    }
    let mean = if repeats == 1 { sum } else { sum / repeats as f64 };
    Ok(BatchPrediction {
        mean,
        traces,
        wall_times,
    })
}

//! Denoising score matching.
//!
//! For a pair `(x, y)`, level `i` and `z ~ N(0, I)`, the perturbed target is
//! `y~ = y + sigma_i z` and the per-sample loss is
//! `l = 1/2 ||s(y~, i, x) + (y~ - y) / sigma_i^2||^2 = 1/2 ||s + z / sigma_i||^2`.
//! Each batch element draws its own level uniformly; the batch objective is the
//! mean of `sigma_i^k * l`.

use std::time::{Duration, Instant};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{self, Error, Result};
use crate::infer::ScoreFunction;
use crate::model::{PretrainNet, ScoreModel};
use crate::nn::{GradientBundle, OptimizerKind, OptimizerState};
use crate::schedule::{LossWeighting, NoiseSchedule};

/// Rows per forward pass when evaluating losses outside of training.
const EVAL_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub loss_exponent: f64,
    pub seed: u64,
    pub pretrain_epochs: usize,
    /// Last-level step size used to turn the level-L loss into a per-step error.
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            batch_size: 256,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::AmsGrad,
            loss_exponent: 1.0,
            seed: 0,
            pretrain_epochs: 100,
            epsilon: 5e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return error::config("batch size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return error::config("learning rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean weighted loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub epoch_wall_ms: Vec<f64>,
    /// Mean unweighted loss per level over the training set after training.
    pub level_losses: Vec<f64>,
    /// Per-step network error estimate at the last level.
    pub network_error: f64,
    pub wall: Duration,
}

impl TrainReport {
    /// `epoch,mean_loss,wall_ms`, preceded by `echo` verbatim.
    pub fn write_csv<W: std::io::Write>(&self, echo: &str, mut out: W) -> Result<()> {
        out.write_all(echo.as_bytes())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "mean_loss", "wall_ms"])?;
        for (e, (l, ms)) in self.epoch_losses.iter().zip(&self.epoch_wall_ms).enumerate() {
            w.write_record([e.to_string(), l.to_string(), format!("{ms:.3}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Brace-delimited block with the error estimate and per-level losses.
    pub fn summary(&self) -> String {
        let levels: Vec<String> = self.level_losses.iter().map(|l| format!("{l:.6e}")).collect();
        format!(
            "{{\n  \"epochs\": {},\n  \"final_loss\": {},\n  \"network_error\": {:.6e},\n  \"level_losses\": [{}],\n  \"wall_s\": {:.3}\n}}\n",
            self.epoch_losses.len(),
            self.epoch_losses.last().map_or("null".to_string(), |l| format!("{l:.6e}")),
            self.network_error,
            levels.join(", "),
            self.wall.as_secs_f64()
        )
    }
}

/// `1/2 ||s(y~, i, x) + (y~ - y) / sigma_i^2||^2` with `y~ = y + sigma_i * noise`.
pub fn dsm_loss_sample(
    score: &dyn ScoreFunction,
    schedule: &NoiseSchedule,
    x: &[f64],
    y: &[f64],
    level: usize,
    noise: &[f64],
) -> Result<f64> {
    schedule.check_level(level)?;
    if y.len() != noise.len() || y.len() != score.output_dim() {
        return error::shape("target, noise and score dimensions differ");
    }
    let sigma = schedule.sigma(level);
    let perturbed: Vec<f64> = y.iter().zip(noise).map(|(y, z)| y + sigma * z).collect();
    let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    let ys = ArrayView2::from_shape((1, y.len()), &perturbed).map_err(|e| Error::Shape(e.to_string()))?;
    let ctx = score.context(xs)?;
    let s = score.score(ys, level, ctx.view())?;
    let var = sigma * sigma;
    Ok(0.5
        * s.iter()
            .zip(perturbed.iter().zip(y))
            .map(|(s, (pt, y))| {
                let r = s + (pt - y) / var;
                r * r
            })
            .sum::<f64>())
}

/// Mean over the batch of `lambda(sigma_i) * dsm_loss_sample` with one uniformly
/// drawn level and one noise draw per element.
pub fn total_weighted_loss<R: Rng + ?Sized>(
    score: &dyn ScoreFunction,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    schedule: &NoiseSchedule,
    weighting: LossWeighting,
    rng: &mut R,
) -> Result<f64> {
    let n = y.nrows();
    if n == 0 {
        return error::config("empty batch");
    }
    let mut total = 0.0;
    for r in 0..n {
        let level = rng.random_range(0..schedule.len());
        let z: Vec<f64> = (0..y.ncols()).map(|_| StandardNormal.sample(rng)).collect();
        let row_x = x.row(r).to_vec();
        let row_y = y.row(r).to_vec();
        total += weighting.weight(schedule.sigma(level))
            * dsm_loss_sample(score, schedule, &row_x, &row_y, level, &z)?;
    }
    Ok(total / n as f64)
}

/// Mean unweighted loss at every level, one noise draw per row and level.
pub fn level_losses(
    score: &dyn ScoreFunction,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = y.nrows();
    if n == 0 {
        return error::config("no rows to evaluate");
    }
    let mut rng = crate::seeded_rng(seed);
    let mut out = Vec::with_capacity(schedule.len());
    let ctx = score.context(x)?;
    for level in 0..schedule.len() {
        let sigma = schedule.sigma(level);
        let mut sum = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let z: Array2<f64> = Array2::from_shape_simple_fn((end - start, y.ncols()), || StandardNormal.sample(&mut rng));
            let perturbed = &y.slice(s![start..end, ..]) + &(&z * sigma);
            let sc = score.score(perturbed.view(), level, ctx.slice(s![start..end, ..]))?;
            let resid = &sc + &(&z / sigma);
            sum += 0.5 * resid.mapv(|v| v * v).sum();
            start = end;
        }
        out.push(sum / n as f64);
    }
    Ok(out)
}

/// `E = epsilon * sqrt(2 * l_L)`, the per-step error implied by the mean
/// last-level loss `l_L`.
pub fn network_error_from_loss(epsilon: f64, last_level_loss: f64) -> f64 {
    epsilon * (2.0 * last_level_loss.max(0.0)).sqrt()
}

pub fn estimate_network_error(
    score: &dyn ScoreFunction,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    schedule: &NoiseSchedule,
    epsilon: f64,
    seed: u64,
) -> Result<f64> {
    let losses = level_losses(score, x, y, schedule, seed)?;
    Ok(network_error_from_loss(epsilon, losses[losses.len() - 1]))
}

/// One batch of training inputs with fixed levels and noise.
#[derive(Debug, Clone)]
pub struct DsmBatch {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub cond: Array2<f64>,
    pub levels: Vec<usize>,
    pub noise: Array2<f64>,
}

impl DsmBatch {
    pub fn draw<R: Rng + ?Sized>(
        x: Array2<f64>,
        y: Array2<f64>,
        cond: Array2<f64>,
        levels: usize,
        rng: &mut R,
    ) -> Self {
        let n = y.nrows();
        let lv = (0..n).map(|_| rng.random_range(0..levels)).collect();
        let noise = Array2::from_shape_simple_fn((n, y.ncols()), || StandardNormal.sample(rng));
        Self {
            x,
            y,
            cond,
            levels: lv,
            noise,
        }
    }
}

/// Mean weighted loss of a batch and its parameter gradient.
pub fn batch_loss_and_grad(
    model: &ScoreModel,
    batch: &DsmBatch,
    schedule: &NoiseSchedule,
    weighting: LossWeighting,
) -> Result<(f64, Vec<f64>, GradientBundle)> {
    let n = batch.y.nrows();
    let sig = Array1::from_iter(batch.levels.iter().map(|&l| schedule.sigma(l)));
    let sig_col = sig.view().insert_axis(Axis(1));
    let perturbed = &batch.y + &(&batch.noise * &sig_col);
    let (out, tape) = model.forward(batch.x.view(), perturbed.view(), batch.cond.view(), &batch.levels)?;
    let resid = &out + &(&batch.noise / &sig_col);
    let weights = sig.mapv(|s| weighting.weight(s));
    let per_sample: Vec<f64> = resid
        .rows()
        .into_iter()
        .zip(weights.iter())
        .map(|(r, w)| w * 0.5 * r.dot(&r))
        .collect();
    let loss = per_sample.iter().sum::<f64>() / n as f64;
    let upstream = &resid * &(weights.view().insert_axis(Axis(1))) / n as f64;
    let grads = model.backward(&tape, upstream.view())?;
    Ok((loss, per_sample, grads.params))
}

/// Trains the score network against a frozen conditioner on the training split
/// of an already standardized dataset.
pub fn train(
    mut model: ScoreModel,
    conditioner: &PretrainNet,
    data: &Dataset,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<(ScoreModel, TrainReport)> {
    config.validate()?;
    if !conditioner.is_frozen() {
        return error::config("the conditioner must be pretrained and frozen before training");
    }
    if model.levels() != schedule.len() {
        return error::config(format!(
            "model has {} levels, schedule has {}",
            model.levels(),
            schedule.len()
        ));
    }
    let started = Instant::now();
    let x = data.train_x();
    let y = data.train_y();
    if x.nrows() == 0 {
        return error::config("empty training split");
    }
    let cond = conditioner.predict(x.view())?;
    let weighting = LossWeighting::new(config.loss_exponent);
    let mut rng = crate::seeded_rng(config.seed);
    let mut opt = OptimizerState::new(config.optimizer, &model.parameter_lens(), config.learning_rate);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut epoch_wall_ms = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch = DsmBatch::draw(
                x.select(Axis(0), idx),
                y.select(Axis(0), idx),
                cond.select(Axis(0), idx),
                schedule.len(),
                &mut rng,
            );
            let (loss, per_sample, grads) = batch_loss_and_grad(&model, &batch, schedule, weighting)?;
            if !loss.is_finite() || !grads.is_finite() {
                let bad = per_sample.iter().position(|v| !v.is_finite()).unwrap_or(0);
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: b,
                    level: batch.levels[bad],
                    learning_rate: config.learning_rate,
                });
            }
            opt.step(&mut model.parameters_mut(), &grads)?;
            sum += per_sample.iter().sum::<f64>();
        }
        let mean = sum / x.nrows() as f64;
        epoch_losses.push(mean);
        epoch_wall_ms.push(epoch_start.elapsed().as_secs_f64() * 1e3);
        if epoch % 100 == 0 || epoch + 1 == config.epochs {
            log::debug!("epoch {epoch}: weighted loss {mean:.6}");
        }
    }

    let scorer = crate::infer::ConditionalScore {
        model: &model,
        conditioner,
    };
    let level_losses = level_losses(&scorer, x.view(), y.view(), schedule, config.seed ^ 0x5eed)?;
    let network_error = network_error_from_loss(config.epsilon, level_losses[level_losses.len() - 1]);
    let report = TrainReport {
        epoch_losses,
        epoch_wall_ms,
        level_losses,
        network_error,
        wall: started.elapsed(),
    };
    Ok((model, report))
}

/// Fits the conditioner by mean squared error on the training split and freezes it.
pub fn pretrain_fphi(data: &Dataset, config: &TrainConfig) -> Result<PretrainNet> {
    config.validate()?;
    let x = data.train_x();
    let y = data.train_y();
    if x.nrows() == 0 {
        return error::config("empty training split");
    }
    let mut rng = crate::seeded_rng(config.seed ^ 0xf0f1);
    let mut net = PretrainNet::init(data.input_dim(), data.output_dim(), &mut rng)?;
    let mut opt = OptimizerState::new(config.optimizer, &net.parameter_lens(), config.learning_rate);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    for epoch in 0..config.pretrain_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let bx = x.select(Axis(0), idx);
            let by = y.select(Axis(0), idx);
            let (out, tape) = net.forward(bx.view())?;
            let resid = &out - &by;
            let n = idx.len() as f64;
            let loss = resid.mapv(|v| v * v).sum() / n;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: b,
                    level: 0,
                    learning_rate: config.learning_rate,
                });
            }
            let upstream = &resid * (2.0 / n);
            let grads = net.backward(&tape, upstream.view())?;
            opt.step(&mut net.parameters_mut()?, &grads.params)?;
            sum += loss * n;
        }
        if epoch % 20 == 0 {
            log::debug!("pretrain epoch {epoch}: mse {:.6}", sum / x.nrows() as f64);
        }
    }
    net.freeze();
    Ok(net)
}

//! End-to-end steps shared by the command line, the ablation grid and the
//! acceptance suite: data, schedule, pretraining, training, evaluation.

use std::time::Duration;

use ndarray::{Array2, Axis};

use super::config::{DataSource, LastSteps, RunConfig, SigmaFirst};
use crate::data::{self, Dataset, TaskKind, ToyTaskConfig};
use crate::error::{Error, Result};
use crate::infer::{self, BatchPrediction, ConditionalScore, InferenceConfig, InitPolicy};
use crate::model::{PretrainNet, ScoreCheckpoint, ScoreModel};
use crate::schedule::{self, NoiseSchedule};
use crate::theory;
use crate::train::{self, TrainConfig, TrainReport};

/// Salt separating the score-network initialization stream from the others.
const INIT_SALT: u64 = 0x1d17;

/// Raw dataset with its train/test split.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Toy(task) => {
            let mut setup = ToyTaskConfig::new(*task, cfg.seed);
            setup.n = cfg.samples;
            setup.test_fraction = cfg.test_fraction;
            data::generate_toy(&setup)
        }
        DataSource::Csv { path, targets } => {
            let names: Vec<&str> = targets.iter().map(String::as_str).collect();
            data::load_csv(path, &names)?.with_split(cfg.test_fraction, cfg.seed)
        }
        DataSource::CsvClasses { path, label } => {
            data::load_csv_classification(path, label)?.with_split(cfg.test_fraction, cfg.seed)
        }
    }
}

/// [`load_data`] followed by standardization with training-split statistics.
pub fn prepare_data(cfg: &RunConfig) -> Result<Dataset> {
    data::standardize(&load_data(cfg)?)
}

pub fn build_schedule(cfg: &RunConfig, ds: &Dataset) -> Result<NoiseSchedule> {
    let first = match cfg.sigma_first {
        SigmaFirst::Value(v) => v,
        SigmaFirst::Auto => schedule::initial_sigma_from_targets(ds.train_y().view())?,
    };
    if first <= cfg.sigma_last {
        return Err(Error::Config(format!(
            "initial noise level {first} does not exceed sigma_last {}; set sigma_first explicitly",
            cfg.sigma_last
        )));
    }
    NoiseSchedule::geometric(first, cfg.sigma_last, cfg.levels)
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch,
        learning_rate: cfg.learning_rate,
        optimizer: cfg.optimizer,
        loss_exponent: cfg.k,
        seed: cfg.seed,
        pretrain_epochs: cfg.pretrain_epochs,
        epsilon: cfg.epsilon,
    }
}

pub fn pretrain(cfg: &RunConfig, ds: &Dataset) -> Result<PretrainNet> {
    train::pretrain_fphi(ds, &train_config(cfg))
}

/// Trains a score network against a frozen conditioner and packages it with
/// its schedule, statistics and the configuration echo.
pub fn train_score(cfg: &RunConfig, ds: &Dataset, conditioner: &PretrainNet) -> Result<(ScoreCheckpoint, TrainReport)> {
    let schedule = build_schedule(cfg, ds)?;
    let mut rng = crate::seeded_rng(cfg.seed ^ INIT_SALT);
    let model = ScoreModel::init(ds.input_dim(), ds.output_dim(), cfg.levels, cfg.hidden, &mut rng)?;
    let (model, report) = train::train(model, conditioner, ds, &schedule, &train_config(cfg))?;
    let ckpt = ScoreCheckpoint {
        model,
        schedule,
        loss_exponent: cfg.k,
        task: ds.task,
        x_stats: ds.x_stats.clone(),
        y_stats: ds.y_stats.clone(),
        config_echo: cfg.echo(),
    };
    Ok((ckpt, report))
}

/// A fitted conditioner and score network.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub conditioner: PretrainNet,
    pub checkpoint: ScoreCheckpoint,
    pub report: TrainReport,
}

impl FittedModel {
    pub fn score(&self) -> ConditionalScore<'_> {
        ConditionalScore {
            model: &self.checkpoint.model,
            conditioner: &self.conditioner,
        }
    }
}

pub fn fit(cfg: &RunConfig, ds: &Dataset) -> Result<FittedModel> {
    let conditioner = pretrain(cfg, ds)?;
    let (checkpoint, report) = train_score(cfg, ds, &conditioner)?;
    Ok(FittedModel {
        conditioner,
        checkpoint,
        report,
    })
}

/// Mean of the standardized training targets.
fn train_target_mean(ds: &Dataset) -> Vec<f64> {
    let y = ds.train_y();
    y.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_else(|| vec![0.0; y.ncols()])
}

/// Resolves the last-level step count. `auto` needs the estimated network error.
pub fn resolve_last_steps(cfg: &RunConfig, schedule: &NoiseSchedule, d: usize, network_error: Option<f64>) -> Result<usize> {
    match cfg.last_steps {
        LastSteps::Fixed(t) => Ok(t),
        LastSteps::Auto => {
            let e = network_error.ok_or_else(|| Error::Config("T = auto needs an estimated network error".into()))?;
            let rate = schedule::refinement_rate(cfg.epsilon, schedule.last());
            let beta_prev = cfg.gamma * schedule.sigma(schedule.len() - 2);
            theory::min_last_steps(e, d, beta_prev, rate)
        }
    }
}

/// Inference settings for a run; the start point is the training-target mean.
pub fn inference_config(cfg: &RunConfig, ds: &Dataset, schedule: &NoiseSchedule, network_error: Option<f64>) -> Result<InferenceConfig> {
    let last = resolve_last_steps(cfg, schedule, ds.output_dim(), network_error)?;
    let mut ic = InferenceConfig::new(schedule, cfg.epsilon, last, cfg.step_cap, cfg.gamma)?;
    ic.use_noise = cfg.use_noise;
    ic.fast = cfg.fast;
    ic.noisy_coef = cfg.noisy_coef;
    ic.seed = cfg.seed;
    ic.y0 = InitPolicy::TargetMean(train_target_mean(ds));
    Ok(ic)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Test-set predictions on the raw target scale.
    pub predictions: Array2<f64>,
    /// Against the noiseless truth when known, else against the test targets.
    pub rmse: Option<f64>,
    pub accuracy: Option<f64>,
    pub batch: BatchPrediction,
    pub inference: InferenceConfig,
}

impl Evaluation {
    pub fn median_wall(&self) -> Duration {
        self.batch.median_wall()
    }

    pub fn mean_wall(&self) -> Duration {
        self.batch.mean_wall()
    }

    /// Mean total refinement steps per input.
    pub fn mean_total_steps(&self) -> f64 {
        let (sum, n) = self
            .batch
            .all_traces()
            .fold((0usize, 0usize), |(s, n), t| (s + t.total_steps(), n + 1));
        sum as f64 / n.max(1) as f64
    }
}

/// Runs inference on the test split `cfg.repeats` times and scores it.
pub fn evaluate(
    cfg: &RunConfig,
    ds: &Dataset,
    checkpoint: &ScoreCheckpoint,
    conditioner: &PretrainNet,
    inference: InferenceConfig,
) -> Result<Evaluation> {
    let score = ConditionalScore {
        model: &checkpoint.model,
        conditioner,
    };
    let xs = ds.test_x();
    let batch = infer::predict_batch(&score, xs.view(), &checkpoint.schedule, &inference, cfg.repeats)?;
    let (predictions, rmse, accuracy) = match ds.task {
        TaskKind::Regression => {
            let preds = match &ds.y_stats {
                Some(stats) => data::destandardize_predictions(batch.mean.view(), stats)?,
                None => batch.mean.clone(),
            };
            // The noiseless truth is never standardized.
            let reference = match (&ds.truth, &ds.y_stats) {
                (Some(_), _) => ds.test_truth(),
                (None, Some(stats)) => stats.invert(ds.test_y().view())?,
                (None, None) => ds.test_y(),
            };
            let rmse = compute_rmse(preds.view(), reference.view())?;
            (preds, Some(rmse), None)
        }
        TaskKind::Classification { .. } => {
            let predicted = batch.labels();
            let truth = ds.labels();
            let test = &ds.split.test;
            let hits = test.iter().zip(&predicted).filter(|(&i, &p)| truth[i] == p).count();
            let acc = hits as f64 / test.len().max(1) as f64;
            (batch.mean.clone(), None, Some(acc))
        }
    };
    Ok(Evaluation {
        predictions,
        rmse,
        accuracy,
        batch,
        inference,
    })
}

/// Mean prediction for raw inputs, returned on the raw target scale.
pub fn predict_raw(
    checkpoint: &ScoreCheckpoint,
    conditioner: &PretrainNet,
    xs: ndarray::ArrayView2<f64>,
    inference: &InferenceConfig,
    repeats: usize,
) -> Result<Array2<f64>> {
    let score = ConditionalScore {
        model: &checkpoint.model,
        conditioner,
    };
    let scaled = match &checkpoint.x_stats {
        Some(stats) => stats.apply(xs)?,
        None => xs.to_owned(),
    };
    let batch = infer::predict_batch(&score, scaled.view(), &checkpoint.schedule, inference, repeats)?;
    match &checkpoint.y_stats {
        Some(stats) => data::destandardize_predictions(batch.mean.view(), stats),
        None => Ok(batch.mean),
    }
}

/// `sqrt(mean over rows and columns of (pred - truth)^2)`.
pub fn compute_rmse(predictions: ndarray::ArrayView2<f64>, truth: ndarray::ArrayView2<f64>) -> Result<f64> {
    if predictions.dim() != truth.dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs truth {:?}",
            predictions.dim(),
            truth.dim()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Shape("no predictions to score".into()));
    }
    let sum: f64 = predictions.iter().zip(truth.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sum / predictions.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ToyTask;
    use ndarray::array;

    /// Mean first, then the mean of squared deviations from the truth.
    fn two_pass_rmse(p: &Array2<f64>, t: &Array2<f64>) -> f64 {
        let diffs: Vec<f64> = p.iter().zip(t.iter()).map(|(a, b)| a - b).collect();
        let n = diffs.len() as f64;
        let mean_sq = diffs.iter().map(|d| d * d / n).sum::<f64>();
        mean_sq.sqrt()
    }

    #[test]
    fn rmse_examples() {
        let t = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(compute_rmse(t.view(), t.view()).unwrap(), 0.0);
        assert_eq!(compute_rmse(array![[1.0], [-1.0]].view(), array![[0.0], [0.0]].view()).unwrap(), 1.0);
        assert!(compute_rmse(t.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn rmse_constant_mean_predictor_matches_two_pass() {
        let mut setup = ToyTaskConfig::new(ToyTask::Sinusoidal, 9);
        setup.noise_std = 0.0;
        setup.n = 2000;
        let ds = data::generate_toy(&setup).unwrap();
        let truth = ds.truth.clone().unwrap();
        let mean = truth.mean().unwrap();
        let pred = Array2::from_elem(truth.raw_dim(), mean);
        let a = compute_rmse(pred.view(), truth.view()).unwrap();
        assert!((a - two_pass_rmse(&pred, &truth)).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn rmse_agrees_with_two_pass(v in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..200)) {
            let p = Array2::from_shape_fn((v.len(), 1), |(i, _)| v[i].0);
            let t = Array2::from_shape_fn((v.len(), 1), |(i, _)| v[i].1);
            let a = compute_rmse(p.view(), t.view()).unwrap();
            proptest::prop_assert!((a - two_pass_rmse(&p, &t)).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn auto_sigma_comes_from_standardized_targets() {
        let mut cfg = RunConfig::for_task(ToyTask::Linear);
        cfg.samples = 200;
        let ds = prepare_data(&cfg).unwrap();
        let s = build_schedule(&cfg, &ds).unwrap();
        let y = ds.train_y();
        let spread = y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min);
        assert!((s.first() - spread).abs() < 1e-12);
        assert!((s.last() - 0.01).abs() < 1e-12);
        cfg.sigma_first = SigmaFirst::Value(0.001);
        assert!(build_schedule(&cfg, &ds).is_err());
    }

    #[test]
    fn auto_last_steps_uses_error_floor() {
        let mut cfg = RunConfig::for_task(ToyTask::Linear);
        cfg.last_steps = LastSteps::Auto;
        let s = NoiseSchedule::geometric(4.0, 0.01, 10).unwrap();
        assert!(resolve_last_steps(&cfg, &s, 1, None).is_err());
        let t = resolve_last_steps(&cfg, &s, 1, Some(1e-6)).unwrap();
        let rate = 0.5;
        let beta_prev = 0.01 * s.sigma(8);
        assert_eq!(t, theory::min_last_steps(1e-6, 1, beta_prev, rate).unwrap());
        cfg.last_steps = LastSteps::Fixed(12);
        assert_eq!(resolve_last_steps(&cfg, &s, 1, None).unwrap(), 12);
    }

    #[test]
    fn raw_prediction_matches_evaluation() {
        let mut cfg = RunConfig::for_task(ToyTask::Quadratic);
        cfg.samples = 256;
        cfg.epochs = 1;
        cfg.pretrain_epochs = 1;
        cfg.hidden = 8;
        cfg.repeats = 2;
        cfg.use_noise = true;
        let ds = prepare_data(&cfg).unwrap();
        let fitted = fit(&cfg, &ds).unwrap();
        let mut ic = inference_config(&cfg, &ds, &fitted.checkpoint.schedule, None).unwrap();
        // Standardized training targets have zero mean up to rounding.
        ic.y0 = InitPolicy::Zeros;
        let ev = evaluate(&cfg, &ds, &fitted.checkpoint, &fitted.conditioner, ic.clone()).unwrap();
        let raw_x = ds.x_stats.as_ref().unwrap().invert(ds.test_x().view()).unwrap();
        let raw = predict_raw(&fitted.checkpoint, &fitted.conditioner, raw_x.view(), &ic, 2).unwrap();
        for (a, b) in raw.iter().zip(ev.predictions.iter()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

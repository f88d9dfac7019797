//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. [`RunConfig::echo`] lists every effective value in a fixed order;
//! that list is written into every artifact so a run can be repeated exactly.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::ToyTask;
use crate::error::{Error, Result};
use crate::infer::NoisyScoreCoef;
use crate::nn::OptimizerKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaFirst {
    /// Largest pairwise distance between training targets.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LastSteps {
    Fixed(usize),
    /// Derived from the estimated network error after training.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Toy(ToyTask),
    /// CSV file; regression on the named target columns.
    Csv { path: PathBuf, targets: Vec<String> },
    /// CSV file; classification on an integer label column.
    CsvClasses { path: PathBuf, label: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub samples: usize,
    pub test_fraction: f64,
    pub levels: usize,
    pub sigma_first: SigmaFirst,
    pub sigma_last: f64,
    pub epsilon: f64,
    pub last_steps: LastSteps,
    pub step_cap: usize,
    pub gamma: f64,
    pub k: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch: usize,
    pub hidden: usize,
    pub seed: u64,
    pub use_noise: bool,
    pub fast: bool,
    pub noisy_coef: NoisyScoreCoef,
    /// Timed inference repeats.
    pub repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_task(ToyTask::Linear)
    }
}

impl RunConfig {
    /// Toy-task setup: 10 levels down to 0.01, step size 5e-5, end-signal
    /// factor 0.01, 30 steps per level.
    pub fn for_task(task: ToyTask) -> Self {
        Self {
            data: DataSource::Toy(task),
            samples: 10_240,
            test_fraction: 0.2,
            levels: 10,
            sigma_first: SigmaFirst::Auto,
            sigma_last: 0.01,
            epsilon: 5e-5,
            last_steps: LastSteps::Fixed(30),
            step_cap: 30,
            gamma: 0.01,
            k: 1.0,
            optimizer: OptimizerKind::AmsGrad,
            learning_rate: 1e-3,
            epochs: 5000,
            pretrain_epochs: 100,
            batch: 256,
            hidden: crate::model::DEFAULT_HIDDEN,
            seed: 2024,
            use_noise: false,
            fast: true,
            noisy_coef: NoisyScoreCoef::Half,
            repeats: 5,
        }
    }

    /// Classification defaults: Adam, batch 32 for small datasets.
    pub fn for_classification(path: PathBuf, label: String, rows: usize) -> Self {
        Self {
            data: DataSource::CsvClasses { path, label },
            optimizer: OptimizerKind::Adam,
            batch: if rows < 1000 { 32 } else { 256 },
            ..Self::default()
        }
    }

    pub fn toy_task(&self) -> Option<ToyTask> {
        match self.data {
            DataSource::Toy(t) => Some(t),
            _ => None,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        // The task decides the defaults, so it is applied first.
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some((_, v)) = pairs.iter().find(|(k, _)| k == "task") {
            *self = Self::for_task(parse(v, "task")?);
        }
        for (k, v) in &pairs {
            if k != "task" {
                self.set(k, v)?;
            }
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "task" => self.data = DataSource::Toy(parse(value, key)?),
            "data" => {
                let path = PathBuf::from(value);
                self.data = match &self.data {
                    DataSource::Csv { targets, .. } => DataSource::Csv { path, targets: targets.clone() },
                    DataSource::CsvClasses { label, .. } => DataSource::CsvClasses { path, label: label.clone() },
                    DataSource::Toy(_) => DataSource::Csv { path, targets: vec!["y".into()] },
                };
            }
            "targets" => {
                let targets: Vec<String> = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                match &mut self.data {
                    DataSource::Csv { targets: t, .. } => *t = targets,
                    _ => return Err(Error::Config("targets requires a csv data source".into())),
                }
            }
            "label" => match &self.data {
                DataSource::Csv { path, .. } | DataSource::CsvClasses { path, .. } => {
                    self.data = DataSource::CsvClasses {
                        path: path.clone(),
                        label: value.to_string(),
                    };
                }
                DataSource::Toy(_) => return Err(Error::Config("label requires a csv data source".into())),
            },
            "samples" => self.samples = parse(value, key)?,
            "test_fraction" => self.test_fraction = parse(value, key)?,
            "L" | "levels" => self.levels = parse(value, key)?,
            "sigma_first" => {
                self.sigma_first = if value == "auto" {
                    SigmaFirst::Auto
                } else {
                    SigmaFirst::Value(parse(value, key)?)
                }
            }
            "sigma_last" => self.sigma_last = parse(value, key)?,
            "epsilon" => self.epsilon = parse(value, key)?,
            "T" | "last_steps" => {
                self.last_steps = if value == "auto" {
                    LastSteps::Auto
                } else {
                    LastSteps::Fixed(parse(value, key)?)
                }
            }
            "step_cap" => self.step_cap = parse(value, key)?,
            "gamma" => self.gamma = parse(value, key)?,
            "k" => self.k = parse(value, key)?,
            "optimizer" => self.optimizer = parse(value, key)?,
            "learning_rate" => self.learning_rate = parse(value, key)?,
            "epochs" => self.epochs = parse(value, key)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(value, key)?,
            "batch" => self.batch = parse(value, key)?,
            "hidden" => self.hidden = parse(value, key)?,
            "seed" => self.seed = parse(value, key)?,
            "noise" => self.use_noise = parse_bool(value, key)?,
            "fast" => self.fast = parse_bool(value, key)?,
            "noisy_coef" => {
                self.noisy_coef = match value {
                    "half" => NoisyScoreCoef::Half,
                    "full" => NoisyScoreCoef::Full,
                    _ => return Err(Error::Config(format!("noisy_coef must be half or full, got '{value}'"))),
                }
            }
            "repeats" => self.repeats = parse(value, key)?,
            _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.levels < 2 {
            return fail(format!("L must be at least 2, got {}", self.levels));
        }
        if !(self.sigma_last > 0.0) {
            return fail("sigma_last must be positive".into());
        }
        if let SigmaFirst::Value(v) = self.sigma_first {
            if !(v > self.sigma_last) {
                return fail(format!("sigma_first {v} must exceed sigma_last {}", self.sigma_last));
            }
        }
        if !(self.epsilon > 0.0) || !(self.gamma > 0.0) || !(self.learning_rate > 0.0) {
            return fail("epsilon, gamma and learning_rate must be positive".into());
        }
        if self.k > 2.0 {
            return fail(format!("k must not exceed 2, got {}", self.k));
        }
        if self.step_cap < 1 || self.batch < 1 || self.repeats < 1 || self.hidden < 1 {
            return fail("step_cap, batch, repeats and hidden must be at least 1".into());
        }
        if self.last_steps == LastSteps::Fixed(0) {
            return fail("T must be at least 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        if self.samples < 2 {
            return fail("samples must be at least 2".into());
        }
        Ok(())
    }

    /// Every effective setting, in a fixed order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        match &self.data {
            DataSource::Toy(t) => push("task", t.to_string()),
            DataSource::Csv { path, targets } => {
                push("data", path.display().to_string());
                push("targets", targets.join(","));
            }
            DataSource::CsvClasses { path, label } => {
                push("data", path.display().to_string());
                push("label", label.clone());
            }
        }
        push("samples", self.samples.to_string());
        push("test_fraction", self.test_fraction.to_string());
        push("L", self.levels.to_string());
        push(
            "sigma_first",
            match self.sigma_first {
                SigmaFirst::Auto => "auto".into(),
                SigmaFirst::Value(v) => v.to_string(),
            },
        );
        push("sigma_last", self.sigma_last.to_string());
        push("epsilon", self.epsilon.to_string());
        push(
            "T",
            match self.last_steps {
                LastSteps::Auto => "auto".into(),
                LastSteps::Fixed(t) => t.to_string(),
            },
        );
        push("step_cap", self.step_cap.to_string());
        push("gamma", self.gamma.to_string());
        push("k", self.k.to_string());
        push("optimizer", self.optimizer.to_string());
        push("learning_rate", self.learning_rate.to_string());
        push("epochs", self.epochs.to_string());
        push("pretrain_epochs", self.pretrain_epochs.to_string());
        push("batch", self.batch.to_string());
        push("hidden", self.hidden.to_string());
        push("seed", self.seed.to_string());
        push("noise", self.use_noise.to_string());
        push("fast", self.fast.to_string());
        push(
            "noisy_coef",
            match self.noisy_coef {
                NoisyScoreCoef::Half => "half".into(),
                NoisyScoreCoef::Full => "full".into(),
            },
        );
        push("repeats", self.repeats.to_string());
        out
    }

    /// Echo block with every line prefixed by `prefix`.
    pub fn echo_lines(&self, prefix: &str) -> String {
        self.echo().iter().map(|(k, v)| format!("{prefix}{k} = {v}\n")).collect()
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.echo_lines(""))
    }
}

fn parse<T: FromStr>(value: &str, key: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("invalid value '{value}' for {key}: {e}")))
}

fn parse_bool(value: &str, key: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid value '{value}' for {key}: expected on/off"))),
    }
}

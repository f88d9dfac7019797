//! Datasets: toy generators, CSV ingestion, standardization and splits.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{self, Error, Result};

/// Relative threshold under which a training column counts as constant.
const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    /// Targets are one-hot rows of width `classes`.
    Classification { classes: usize },
}

/// Per-column z-score statistics fitted on the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns whose training std was zero; their std is clamped to 1.
    pub degenerate: Vec<bool>,
}

impl ColumnStats {
    pub fn fit(data: ArrayView2<f64>, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return error::config("cannot standardize with an empty training split");
        }
        let n = rows.len() as f64;
        let sel = data.select(Axis(0), rows);
        let mut mean = Vec::with_capacity(sel.ncols());
        let mut std = Vec::with_capacity(sel.ncols());
        let mut degenerate = Vec::with_capacity(sel.ncols());
        for col in sel.columns() {
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            if !(sd > DEGENERATE_STD * (1.0 + mu.abs())) {
                log::warn!("constant column (mean {mu}); passing through with unit scale");
                std.push(1.0);
                degenerate.push(true);
            } else {
                std.push(sd);
                degenerate.push(false);
            }
            mean.push(mu);
        }
        Ok(Self {
            mean,
            std,
            degenerate,
        })
    }

    pub fn identity(cols: usize) -> Self {
        Self {
            mean: vec![0.0; cols],
            std: vec![1.0; cols],
            degenerate: vec![false; cols],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(data.ncols())?;
        let mut out = data.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (mu, sd) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (v - mu) / sd);
        }
        Ok(out)
    }

    pub fn invert(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(data.ncols())?;
        let mut out = data.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (mu, sd) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| v * sd + mu);
        }
        Ok(out)
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.len() {
            return error::shape(format!("stats cover {} columns, data has {cols}", self.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn all_train(n: usize) -> Self {
        Self {
            train: (0..n).collect(),
            test: Vec::new(),
        }
    }
}

/// Seeded shuffle of `0..n`, then the first `round(n * test_fraction)` indices
/// go to the test split. The training split always keeps at least one row.
pub fn split(n: usize, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return error::config(format!("test fraction must lie in (0, 1), got {test_fraction}"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut crate::seeded_rng(seed));
    let n_test = ((n as f64 * test_fraction).round() as usize).min(n.saturating_sub(1));
    let train = idx.split_off(n_test);
    Ok(Split { train, test: idx })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    /// Noiseless targets, when the generating function is known.
    pub truth: Option<Array2<f64>>,
    pub split: Split,
    pub task: TaskKind,
    pub x_stats: Option<ColumnStats>,
    pub y_stats: Option<ColumnStats>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    /// Free-form description written as the first comment line of CSV snapshots.
    pub provenance: Option<String>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array2<f64>, task: TaskKind) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return error::shape(format!("{} feature rows but {} target rows", x.nrows(), y.nrows()));
        }
        let feature_names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        let target_names = if y.ncols() == 1 {
            vec!["y".to_string()]
        } else {
            (0..y.ncols()).map(|j| format!("y{j}")).collect()
        };
        Ok(Self {
            split: Split::all_train(x.nrows()),
            x,
            y,
            truth: None,
            task,
            x_stats: None,
            y_stats: None,
            feature_names,
            target_names,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn with_split(mut self, test_fraction: f64, seed: u64) -> Result<Self> {
        self.split = split(self.len(), test_fraction, seed)?;
        Ok(self)
    }

    pub fn train_x(&self) -> Array2<f64> {
        self.x.select(Axis(0), &self.split.train)
    }

    pub fn train_y(&self) -> Array2<f64> {
        self.y.select(Axis(0), &self.split.train)
    }

    pub fn test_x(&self) -> Array2<f64> {
        self.x.select(Axis(0), &self.split.test)
    }

    pub fn test_y(&self) -> Array2<f64> {
        self.y.select(Axis(0), &self.split.test)
    }

    /// Noiseless test targets when known, else the observed test targets.
    pub fn test_truth(&self) -> Array2<f64> {
        match &self.truth {
            Some(t) => t.select(Axis(0), &self.split.test),
            None => self.test_y(),
        }
    }

    /// Class labels for classification datasets (argmax of each target row).
    pub fn labels(&self) -> Vec<usize> {
        argmax_rows(self.y.view())
    }
}

/// z-scores features (and regression targets) with training-split statistics.
/// Classification targets stay one-hot.
pub fn standardize(dataset: &Dataset) -> Result<Dataset> {
    let x_stats = ColumnStats::fit(dataset.x.view(), &dataset.split.train)?;
    let mut out = dataset.clone();
    out.x = x_stats.apply(dataset.x.view())?;
    out.x_stats = Some(x_stats);
    if dataset.task == TaskKind::Regression {
        let y_stats = ColumnStats::fit(dataset.y.view(), &dataset.split.train)?;
        out.y = y_stats.apply(dataset.y.view())?;
        out.y_stats = Some(y_stats);
    }
    Ok(out)
}

pub fn destandardize_predictions(preds: ArrayView2<f64>, y_stats: &ColumnStats) -> Result<Array2<f64>> {
    y_stats.invert(preds)
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (r, &c) in labels.iter().enumerate() {
        if c >= classes {
            return error::config(format!("label {c} out of range for {classes} classes"));
        }
        out[[r, c]] = 1.0;
    }
    Ok(out)
}

pub fn argmax_rows(a: ArrayView2<f64>) -> Vec<usize> {
    a.rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Toy regression tasks

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyTask {
    Linear,
    Quadratic,
    LogLogLinear,
    LogLogCubic,
    Sinusoidal,
}

impl ToyTask {
    pub const ALL: [ToyTask; 5] = [
        ToyTask::Linear,
        ToyTask::Quadratic,
        ToyTask::LogLogLinear,
        ToyTask::LogLogCubic,
        ToyTask::Sinusoidal,
    ];

    /// Noiseless system model.
    pub fn eval(self, x: f64) -> f64 {
        match self {
            ToyTask::Linear => 2.0 * x + 3.0,
            ToyTask::Quadratic => 3.0 * x * x + 2.0 * x + 1.0,
            ToyTask::LogLogLinear => x.exp(),
            ToyTask::LogLogCubic => (3.0 * x.ln()).exp(),
            ToyTask::Sinusoidal => x + 0.3 * (2.0 * std::f64::consts::PI * x).sin(),
        }
    }

    pub fn x_range(self) -> (f64, f64) {
        match self {
            ToyTask::Linear | ToyTask::Quadratic => (-5.0, 5.0),
            ToyTask::LogLogLinear | ToyTask::LogLogCubic => (0.0, 10.0),
            ToyTask::Sinusoidal => (0.0, 1.0),
        }
    }

    pub fn noise_std(self) -> f64 {
        match self {
            ToyTask::Linear | ToyTask::Quadratic => 2.0,
            ToyTask::LogLogLinear | ToyTask::LogLogCubic => 0.15,
            ToyTask::Sinusoidal => 0.08,
        }
    }

    /// Log-log tasks exclude the left endpoint so that `log x` is defined.
    fn open_at_low(self) -> bool {
        matches!(self, ToyTask::LogLogLinear | ToyTask::LogLogCubic)
    }

    pub fn name(self) -> &'static str {
        match self {
            ToyTask::Linear => "linear",
            ToyTask::Quadratic => "quadratic",
            ToyTask::LogLogLinear => "loglog_linear",
            ToyTask::LogLogCubic => "loglog_cubic",
            ToyTask::Sinusoidal => "sinusoidal",
        }
    }
}

impl fmt::Display for ToyTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToyTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToyTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown toy task '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTaskConfig {
    pub task: ToyTask,
    pub n: usize,
    pub seed: u64,
    pub noise_std: f64,
    pub x_range: (f64, f64),
    pub test_fraction: f64,
}

impl ToyTaskConfig {
    /// 10240 samples, 80/20 split, table noise level and input range.
    pub fn new(task: ToyTask, seed: u64) -> Self {
        Self {
            task,
            n: 10_240,
            seed,
            noise_std: task.noise_std(),
            x_range: task.x_range(),
            test_fraction: 0.2,
        }
    }
}

/// Samples `x` uniformly on the task range and `y = f(x) + N(0, noise_std^2)`.
/// The noiseless `f(x)` is kept in [`Dataset::truth`].
pub fn generate_toy(setup: &ToyTaskConfig) -> Result<Dataset> {
    if setup.n == 0 {
        return error::config("toy dataset needs at least one sample");
    }
    if !(setup.noise_std >= 0.0) || !(setup.x_range.1 > setup.x_range.0) {
        return error::config("invalid toy task noise or range");
    }
    let mut rng = crate::seeded_rng(setup.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (lo, hi) = setup.x_range;
    let mut x = Array2::zeros((setup.n, 1));
    let mut y = Array2::zeros((setup.n, 1));
    let mut truth = Array2::zeros((setup.n, 1));
    for i in 0..setup.n {
        let u: f64 = rng.random();
        let xi = if setup.task.open_at_low() {
            hi - (hi - lo) * u
        } else {
            lo + (hi - lo) * u
        };
        let fx = setup.task.eval(xi);
        let eps: f64 = normal.sample(&mut rng);
        x[[i, 0]] = xi;
        truth[[i, 0]] = fx;
        y[[i, 0]] = if setup.noise_std == 0.0 { fx } else { fx + setup.noise_std * eps };
    }
    let mut ds = Dataset::new(x, y, TaskKind::Regression)?;
    ds.feature_names = vec!["x".into()];
    ds.truth = Some(truth);
    ds.provenance = Some(format!("task={} seed={} n={}", setup.task, setup.seed, setup.n));
    if setup.n >= 2 {
        ds = ds.with_split(setup.test_fraction, setup.seed)?;
    }
    Ok(ds)
}

// ---------------------------------------------------------------------------
// CSV

fn data_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_err(path, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| data_err(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(data_err(path, "missing header"));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| data_err(path, e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
        if rec.len() != header.len() {
            return Err(data_err(
                path,
                format!("row {} (line {line}) has {} cells, header has {}", i + 1, rec.len(), header.len()),
            ));
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                data_err(
                    path,
                    format!("row {} (line {line}), column '{}': non-numeric value '{cell}'", i + 1, header[j]),
                )
            })?;
            vals.push(v);
        }
        rows.push(vals);
    }
    Ok(RawTable { header, rows })
}

fn column_index(path: &Path, header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| data_err(path, format!("target column '{name}' not found")))
}

/// Loads a regression dataset; every column not named in `target_columns`
/// becomes a feature, in file order. Lines starting with `#` are ignored.
pub fn load_csv(path: impl AsRef<Path>, target_columns: &[&str]) -> Result<Dataset> {
    let path = path.as_ref();
    if target_columns.is_empty() {
        return error::config("at least one target column is required");
    }
    let table = read_table(path)?;
    let targets: Vec<usize> = target_columns
        .iter()
        .map(|c| column_index(path, &table.header, c))
        .collect::<Result<_>>()?;
    let features: Vec<usize> = (0..table.header.len()).filter(|j| !targets.contains(j)).collect();
    let n = table.rows.len();
    let x = Array2::from_shape_fn((n, features.len()), |(i, j)| table.rows[i][features[j]]);
    let y = Array2::from_shape_fn((n, targets.len()), |(i, j)| table.rows[i][targets[j]]);
    let mut ds = Dataset::new(x, y, TaskKind::Regression)?;
    ds.feature_names = features.iter().map(|&j| table.header[j].clone()).collect();
    ds.target_names = targets.iter().map(|&j| table.header[j].clone()).collect();
    Ok(ds)
}

/// Loads a classification dataset whose `label_column` holds integer class ids.
pub fn load_csv_classification(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let label_idx = column_index(path, &table.header, label_column)?;
    let mut labels = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let v = row[label_idx];
        if v < 0.0 || v.fract() != 0.0 {
            return Err(data_err(path, format!("row {}: label {v} is not a class id", i + 1)));
        }
        labels.push(v as usize);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let features: Vec<usize> = (0..table.header.len()).filter(|&j| j != label_idx).collect();
    let n = table.rows.len();
    let x = Array2::from_shape_fn((n, features.len()), |(i, j)| table.rows[i][features[j]]);
    let y = one_hot(&labels, classes)?;
    let mut ds = Dataset::new(x, y, TaskKind::Classification { classes })?;
    ds.feature_names = features.iter().map(|&j| table.header[j].clone()).collect();
    ds.target_names = (0..classes).map(|c| format!("{label_column}={c}")).collect();
    Ok(ds)
}

/// Writes features then targets, preceded by a `#` provenance line when set.
/// Values use shortest round-trip formatting, so a reload is bit-identical.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    if let Some(p) = &dataset.provenance {
        out.push_str("# ");
        out.push_str(p);
        out.push('\n');
    }
    let names: Vec<&str> = dataset
        .feature_names
        .iter()
        .chain(&dataset.target_names)
        .map(String::as_str)
        .collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for (xr, yr) in dataset.x.rows().into_iter().zip(dataset.y.rows()) {
        let cells: Vec<String> = xr.iter().chain(yr.iter()).map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

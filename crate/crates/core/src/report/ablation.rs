use std::fmt::Write as _;
use std::io::Write;
use std::time::Duration;

use super::config::RunConfig;
use super::pipeline::{self, Evaluation};
use super::steps::report_step_table;
use crate::data::Dataset;
use crate::error::Result;
use crate::model::{PretrainNet, ScoreCheckpoint};

/// Loss exponents compared by the grid.
pub const ABLATION_K: [f64; 2] = [1.0, 2.0];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub k: f64,
    pub use_noise: bool,
    pub fast: bool,
    pub rmse: Option<f64>,
    pub accuracy: Option<f64>,
    pub mean_wall: Duration,
    pub median_wall: Duration,
    /// Mean steps per level.
    pub mean_steps: Vec<f64>,
    /// Set when training or inference failed for this cell.
    pub error: Option<String>,
}

impl AblationCell {
    fn failed(k: f64, use_noise: bool, fast: bool, message: String) -> Self {
        Self {
            k,
            use_noise,
            fast,
            rmse: None,
            accuracy: None,
            mean_wall: Duration::ZERO,
            median_wall: Duration::ZERO,
            mean_steps: Vec::new(),
            error: Some(message),
        }
    }

    fn from_evaluation(k: f64, use_noise: bool, fast: bool, ev: &Evaluation) -> Result<Self> {
        let steps = report_step_table(ev.batch.all_traces())?;
        Ok(Self {
            k,
            use_noise,
            fast,
            rmse: ev.rmse,
            accuracy: ev.accuracy,
            mean_wall: ev.mean_wall(),
            median_wall: ev.median_wall(),
            mean_steps: steps.mean_steps,
            error: None,
        })
    }

    pub fn total_steps(&self) -> f64 {
        self.mean_steps.iter().sum()
    }

    pub fn label(&self) -> String {
        format!(
            "k={} {} {}",
            self.k,
            if self.use_noise { "noise" } else { "no-noise" },
            if self.fast { "fast" } else { "full" }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
    /// Configuration echo, `# key = value` lines.
    pub echo: String,
}

impl AblationTable {
    pub fn cell(&self, k: f64, use_noise: bool, fast: bool) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.k == k && c.use_noise == use_noise && c.fast == fast)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.echo.as_bytes())?;
        let levels = self.cells.iter().map(|c| c.mean_steps.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["k", "noise", "fast", "rmse", "accuracy", "mean_wall_s", "median_wall_s", "total_steps"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=levels).map(|i| format!("n_{i}")));
        header.push("error".into());
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for c in &self.cells {
            let mut rec = vec![
                c.k.to_string(),
                c.use_noise.to_string(),
                c.fast.to_string(),
                opt(c.rmse),
                opt(c.accuracy),
                c.mean_wall.as_secs_f64().to_string(),
                c.median_wall.as_secs_f64().to_string(),
                c.total_steps().to_string(),
            ];
            rec.extend((0..levels).map(|i| c.mean_steps.get(i).map(|v| v.to_string()).unwrap_or_default()));
            rec.push(c.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = self.echo.clone();
        let _ = writeln!(
            s,
            "{:<22} {:>10} {:>10} {:>12} {:>12} {:>8}",
            "cell", "rmse", "accuracy", "mean_t (s)", "median_t (s)", "steps"
        );
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        for c in &self.cells {
            let _ = write!(
                s,
                "{:<22} {:>10} {:>10} {:>12.4} {:>12.4} {:>8.2}",
                c.label(),
                fmt(c.rmse),
                fmt(c.accuracy),
                c.mean_wall.as_secs_f64(),
                c.median_wall.as_secs_f64(),
                c.total_steps()
            );
            if let Some(e) = &c.error {
                let _ = write!(s, "  error: {e}");
            }
            s.push('\n');
        }
        s
    }
}

/// Evaluates one trained model under the four noise/fast combinations.
pub fn flag_cells(
    cfg: &RunConfig,
    ds: &Dataset,
    conditioner: &PretrainNet,
    checkpoint: &ScoreCheckpoint,
    network_error: f64,
) -> Vec<AblationCell> {
    let k = checkpoint.loss_exponent;
    let mut out = Vec::with_capacity(4);
    for use_noise in [false, true] {
        for fast in [true, false] {
            let mut c = cfg.clone();
            c.use_noise = use_noise;
            c.fast = fast;
            let cell = pipeline::inference_config(&c, ds, &checkpoint.schedule, Some(network_error))
                .and_then(|ic| pipeline::evaluate(&c, ds, checkpoint, conditioner, ic))
                .and_then(|ev| AblationCell::from_evaluation(k, use_noise, fast, &ev));
            out.push(cell.unwrap_or_else(|e| AblationCell::failed(k, use_noise, fast, e.to_string())));
        }
    }
    out
}

/// Trains one model per loss exponent against a shared conditioner and
/// evaluates every noise/fast combination. Failures are recorded per cell.
pub fn run_ablation(cfg: &RunConfig, ds: &Dataset) -> Result<AblationTable> {
    let conditioner = pipeline::pretrain(cfg, ds)?;
    let mut cells = Vec::with_capacity(8);
    for k in ABLATION_K {
        let mut kc = cfg.clone();
        kc.k = k;
        match pipeline::train_score(&kc, ds, &conditioner) {
            Ok((ckpt, report)) => cells.extend(flag_cells(&kc, ds, &conditioner, &ckpt, report.network_error)),
            Err(e) => {
                for use_noise in [false, true] {
                    for fast in [true, false] {
                        cells.push(AblationCell::failed(k, use_noise, fast, e.to_string()));
                    }
                }
            }
        }
    }
    Ok(AblationTable {
        cells,
        echo: cfg.echo_lines("# "),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ToyTask;

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::for_task(ToyTask::Linear);
        cfg.samples = 200;
        cfg.epochs = 2;
        cfg.pretrain_epochs = 2;
        cfg.hidden = 8;
        cfg.batch = 64;
        cfg.repeats = 2;
        cfg.step_cap = 5;
        cfg.last_steps = crate::report::LastSteps::Fixed(5);
        cfg
    }

    #[test]
    fn grid_has_eight_cells_and_is_deterministic() {
        let cfg = tiny_config();
        let ds = pipeline::prepare_data(&cfg).unwrap();
        let a = run_ablation(&cfg, &ds).unwrap();
        assert_eq!(a.cells.len(), 8);
        for c in &a.cells {
            assert!(c.error.is_none(), "{:?}", c.error);
            assert!(c.rmse.unwrap() >= 0.0);
            assert!(c.mean_steps.iter().all(|&n| n <= cfg.step_cap as f64));
        }
        for k in ABLATION_K {
            for noise in [false, true] {
                let full = a.cell(k, noise, false).unwrap();
                assert!(full.mean_steps.iter().all(|&n| n == cfg.step_cap as f64));
                assert!(a.cell(k, noise, true).unwrap().total_steps() <= full.total_steps());
            }
        }
        let b = run_ablation(&cfg, &ds).unwrap();
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(x.rmse, y.rmse);
            assert_eq!(x.mean_steps, y.mean_steps);
        }
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 9);
        assert!(a.to_text().contains("k=2 noise full"));
    }

    #[test]
    fn training_failure_is_recorded_per_cell() {
        let mut cfg = tiny_config();
        // The conditioner still trains; the score network cannot be built.
        cfg.hidden = 0;
        let ds = pipeline::prepare_data(&cfg).unwrap();
        let t = run_ablation(&cfg, &ds).unwrap();
        assert_eq!(t.cells.len(), 8);
        assert!(t.cells.iter().all(|c| c.error.is_some() && c.rmse.is_none()));
        assert!(t.to_text().contains("error:"));
    }
}

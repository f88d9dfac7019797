use std::fmt::Write as _;
use std::io::Write;
use std::time::Duration;

use crate::error::{self, Result};
use crate::infer::PredictionTrace;

/// Mean refinement steps per level and mean wall time of the inference calls.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTable {
    pub mean_steps: Vec<f64>,
    pub mean_wall: Duration,
    pub traces: usize,
}

impl StepTable {
    pub fn total(&self) -> f64 {
        self.mean_steps.iter().sum()
    }

    /// `n_1 .. n_L  t` header and one row, two decimals.
    pub fn to_text(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        for (i, n) in self.mean_steps.iter().enumerate() {
            let _ = write!(head, "{:>8}", format!("n_{}", i + 1));
            let _ = write!(row, "{n:>8.2}");
        }
        let _ = write!(head, "{:>12}", "t (s)");
        let _ = write!(row, "{:>12.4}", self.mean_wall.as_secs_f64());
        format!("{head}\n{row}\n")
    }
}

pub fn report_step_table<'a>(traces: impl IntoIterator<Item = &'a PredictionTrace>) -> Result<StepTable> {
    let mut sums: Vec<f64> = Vec::new();
    let mut wall = Duration::ZERO;
    let mut count = 0usize;
    for t in traces {
        if sums.is_empty() {
            sums = vec![0.0; t.steps.len()];
        } else if sums.len() != t.steps.len() {
            return error::shape("traces have different level counts");
        }
        for (s, &n) in sums.iter_mut().zip(&t.steps) {
            *s += n as f64;
        }
        wall += t.wall;
        count += 1;
    }
    if count == 0 {
        return error::config("no traces to summarize");
    }
    Ok(StepTable {
        mean_steps: sums.iter().map(|s| s / count as f64).collect(),
        mean_wall: wall / count as u32,
        traces: count,
    })
}

/// One line per (row, level): `row_id,level,steps,exit_reason`.
pub fn write_trace_csv<W: Write>(traces: &[PredictionTrace], echo: &str, mut out: W) -> Result<()> {
    out.write_all(echo.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row_id", "level", "steps", "exit_reason"])?;
    for (r, t) in traces.iter().enumerate() {
        for (l, (n, e)) in t.steps.iter().zip(&t.exits).enumerate() {
            w.write_record([r.to_string(), (l + 1).to_string(), n.to_string(), e.as_str().to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

//! Closed forms and bounds for the noise-free refinement at the last level,
//! plus a randomized verifier that checks them against direct simulation.
//!
//! With the exact score `(y_I - y) / sigma_i^2` every step at every level
//! contracts the distance to `y_I` by `1 - r`, where `r = epsilon / sigma_L^2`:
//!
//! ```text
//! y_t = (1 - r)^t (y_0 - y_I) + y_I
//! ```
//!
//! With an additive error `E_j` at step `j + 1` the same recursion unrolls to
//! `y_t = (1 - r)^t (y_0 - y_I) + y_I + sum_j (1 - r)^(t-1-j) E_j`, so the most
//! recent error carries weight 1.

use std::fmt::Write as _;
use std::io::Write;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{self, Result};
use crate::infer::{self, ExitReason, GaussianScoreOracle, InferenceConfig};
use crate::schedule::NoiseSchedule;

/// `(1 - r)^t (y0 - y_I) + y_I`.
pub fn closed_form_iterate(y0: &[f64], target: &[f64], rate: f64, t: u32) -> Vec<f64> {
    let decay = (1.0 - rate).powi(t as i32);
    y0.iter().zip(target).map(|(y, yi)| decay * (y - yi) + yi).collect()
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate < 2.0 {
        Ok(())
    } else {
        error::config(format!("refinement rate must lie in (0, 2), got {rate}"))
    }
}

/// Real-valued number of steps for the distance to shrink from `beta_prev` to
/// `beta_i`: `log_{|1-r|}(beta_i / beta_prev)`. Exactly 1 when `r = 1`.
pub fn switch_time_bound(beta_i: f64, beta_prev: f64, rate: f64) -> Result<f64> {
    check_rate(rate)?;
    if !(beta_i > 0.0 && beta_i < beta_prev) {
        return error::config(format!(
            "end-signals must satisfy 0 < beta_i < beta_prev, got {beta_i} and {beta_prev}"
        ));
    }
    if rate == 1.0 {
        return Ok(1.0);
    }
    Ok((beta_i / beta_prev).ln() / (1.0 - rate).abs().ln())
}

/// Bound for the first level, starting within `sigma_first` of the target.
/// Zero when the start is already inside the end-signal region.
pub fn first_switch_bound(beta_first: f64, sigma_first: f64, rate: f64) -> Result<f64> {
    check_rate(rate)?;
    if beta_first >= sigma_first {
        return Ok(0.0);
    }
    switch_time_bound(beta_first, sigma_first, rate)
}

/// Closed form after `errors.len()` steps with additive errors given in
/// chronological order.
pub fn iterate_with_errors(y0: &[f64], target: &[f64], rate: f64, errors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let t = errors.len();
    let mut out = closed_form_iterate(y0, target, rate, t as u32);
    for (j, e) in errors.iter().enumerate() {
        if e.len() != y0.len() {
            return error::shape(format!("error {j} has {} entries, expected {}", e.len(), y0.len()));
        }
        let w = (1.0 - rate).powi((t - 1 - j) as i32);
        for (o, e) in out.iter_mut().zip(e) {
            *o += w * e;
        }
    }
    Ok(out)
}

/// One recursion step `y - r (y - y_I) + e`.
fn simulate_step(y: &mut [f64], target: &[f64], rate: f64, e: Option<&[f64]>) {
    for (j, (y, yi)) in y.iter_mut().zip(target).enumerate() {
        *y -= rate * (*y - yi);
        if let Some(e) = e {
            *y += e[j];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuaranteeCheck {
    pub premise_holds: bool,
    /// `|1-r|^t sqrt(d) beta_prev + E (1 - |1-r|^t) / r`.
    pub conclusion_bound: f64,
}

/// Evaluates the guarantee that `t` last-level steps land within `beta_last`
/// of the target when every step errs by at most `error_norm`.
///
/// The geometric factor `(1 - |1-r|^t) / r` sums the error weights only for
/// `r <= 1`; above that the true sum is `(1 - |1-r|^t) / (1 - |1-r|)`, which is
/// larger, and the guarantee can fail.
pub fn last_level_guarantee(t: u32, rate: f64, d: usize, beta_prev: f64, error_norm: f64, beta_last: f64) -> Result<GuaranteeCheck> {
    check_rate(rate)?;
    if beta_prev < 0.0 || error_norm < 0.0 || beta_last < 0.0 {
        return error::config("bounds and error norms must be non-negative");
    }
    let decay = (1.0 - rate).abs().powi(t as i32);
    let lhs = decay * (d as f64).sqrt() * beta_prev + error_norm * (1.0 - decay) / rate;
    Ok(GuaranteeCheck {
        premise_holds: lhs < beta_last,
        conclusion_bound: lhs,
    })
}

/// Smallest last-level step count after which the decay of the starting
/// distance is dominated by accumulated network error:
/// `ceil(log_{|1-r|}(E / (sqrt(d) beta_prev r + E)))`, at least 1.
pub fn min_last_steps(error_norm: f64, d: usize, beta_prev: f64, rate: f64) -> Result<usize> {
    check_rate(rate)?;
    if !(error_norm >= 0.0 && beta_prev >= 0.0) {
        return error::config("error norm and end-signal must be non-negative");
    }
    if error_norm == 0.0 {
        log::info!("zero network error: no error floor, one step suffices in the limit");
        return Ok(1);
    }
    if rate == 1.0 {
        return Ok(1);
    }
    let arg = error_norm / ((d as f64).sqrt() * beta_prev * rate + error_norm);
    let steps = (arg.ln() / (1.0 - rate).abs().ln()).ceil();
    Ok(if steps.is_finite() && steps >= 1.0 { steps as usize } else { 1 })
}

/// Outcome of one randomized check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub max_abs_deviation: f64,
    pub violations: usize,
    /// Sweep ranges, human readable.
    pub parameters: String,
    /// Parameters of the first violating trial.
    pub counterexample: Option<String>,
}

impl CheckResult {
    fn new(name: &str, parameters: &str) -> Self {
        Self {
            name: name.to_string(),
            trials: 0,
            max_abs_deviation: 0.0,
            violations: 0,
            parameters: parameters.to_string(),
            counterexample: None,
        }
    }

    fn record(&mut self, deviation: f64, violated: bool, describe: impl FnOnce() -> String) {
        self.trials += 1;
        if deviation.is_nan() || violated {
            self.violations += 1;
            if self.counterexample.is_none() {
                self.counterexample = Some(describe());
            }
        }
        if deviation > self.max_abs_deviation {
            self.max_abs_deviation = deviation;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check", "trials", "max_abs_deviation", "violations", "parameters", "counterexample"])?;
        for c in &self.checks {
            w.write_record([
                c.name.clone(),
                c.trials.to_string(),
                format!("{:e}", c.max_abs_deviation),
                c.violations.to_string(),
                c.parameters.clone(),
                c.counterexample.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut s = format!("theory checks (seed {})\n", self.seed);
        for c in &self.checks {
            let _ = writeln!(
                s,
                "  {:<width$}  {}  trials={:<6} violations={:<4} max_dev={:.3e}",
                c.name,
                if c.passed() { "PASS" } else { "FAIL" },
                c.trials,
                c.violations,
                c.max_abs_deviation,
            );
            if let Some(ce) = &c.counterexample {
                let _ = writeln!(s, "    counterexample: {ce}");
            }
        }
        s
    }
}

/// Rate in (0, 2) away from 1; half of the draws land in (1, 2).
fn random_rate<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let r: f64 = rng.random_range(0.01..1.99);
        if (r - 1.0).abs() > 1e-3 {
            return r;
        }
    }
}

fn random_vec<R: Rng + ?Sized>(rng: &mut R, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Random direction scaled to the given Euclidean norm.
fn vector_with_norm<R: Rng + ?Sized>(rng: &mut R, d: usize, norm: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm2(&v).max(f64::MIN_POSITIVE);
    v.iter().map(|x| x * norm / n).collect()
}

/// Identity tolerance for the closed forms.
const IDENTITY_TOL: f64 = 1e-10;

fn verify_closed_form<R: Rng + ?Sized>(trials: usize, rng: &mut R) -> CheckResult {
    let mut c = CheckResult::new("closed_form", "d in 1..=4, r in (0,2), t in 0..=1000, |y| <= 5");
    for _ in 0..trials {
        let d = rng.random_range(1..=4);
        let y0 = random_vec(rng, d, 5.0);
        let yi = random_vec(rng, d, 5.0);
        let r = random_rate(rng);
        let t = rng.random_range(0..=1000u32);
        let mut y = y0.clone();
        for _ in 0..t {
            simulate_step(&mut y, &yi, r, None);
        }
        let dev = max_abs_diff(&y, &closed_form_iterate(&y0, &yi, r, t));
        c.record(dev, dev > IDENTITY_TOL, || format!("y0={y0:?} yI={yi:?} r={r} t={t}"));
    }
    c
}

fn verify_error_unrolling<R: Rng + ?Sized>(trials: usize, rng: &mut R) -> CheckResult {
    let mut c = CheckResult::new("error_unrolling", "d in 1..=4, r in (0,2), t in 0..=50, |E_j| <= 0.1");
    for _ in 0..trials {
        let d = rng.random_range(1..=4);
        let y0 = random_vec(rng, d, 5.0);
        let yi = random_vec(rng, d, 5.0);
        let r = random_rate(rng);
        let t = rng.random_range(0..=50usize);
        let errors: Vec<Vec<f64>> = (0..t).map(|_| random_vec(rng, d, 0.1)).collect();
        let mut y = y0.clone();
        for e in &errors {
            simulate_step(&mut y, &yi, r, Some(e));
        }
        let dev = match iterate_with_errors(&y0, &yi, r, &errors) {
            Ok(closed) => max_abs_diff(&y, &closed),
            Err(_) => f64::NAN,
        };
        c.record(dev, dev > IDENTITY_TOL, || format!("y0={y0:?} yI={yi:?} r={r} t={t}"));
    }
    c
}

/// Runs the full inference loop with the exact score and compares each
/// level's step count with its switch-time bound.
fn verify_switch_time<R: Rng + ?Sized>(trials: usize, rng: &mut R) -> Result<CheckResult> {
    let mut c = CheckResult::new(
        "switch_time",
        "L in 3..=12, sigma_1 in (0.5,5), sigma_L/sigma_1 in (1e-3,0.5), r in (0,2), gamma in (0.01,0.9), d in 1..=3",
    );
    for _ in 0..trials {
        let levels = rng.random_range(3..=12usize);
        let first = rng.random_range(0.5..5.0);
        let last = first * rng.random_range(1e-3..0.5);
        let schedule = NoiseSchedule::geometric(first, last, levels)?;
        let r = random_rate(rng);
        let gamma = rng.random_range(0.01..0.9);
        let d = rng.random_range(1..=3usize);
        let mut config = InferenceConfig::new(&schedule, r * last * last, 1, 100_000, gamma)?;
        let yi = random_vec(rng, d, 3.0);
        // Start strictly inside the first noise level.
        let start = first * rng.random_range(0.0..1.0);
        let offset = vector_with_norm(rng, d, start);
        config.y0 = infer::InitPolicy::Custom(yi.iter().zip(&offset).map(|(a, b)| a + b).collect());
        let oracle = GaussianScoreOracle::new(&schedule, d);
        let (_, trace) = infer::infer(&oracle, &yi, &schedule, &config)?;
        let betas = &config.end_signals.betas;
        let bound = first_switch_bound(betas[0], first, r)?;
        let n0 = trace.steps[0] as f64;
        let allowed = (bound + 1e-9).ceil().max(1.0);
        c.record((n0 - allowed).max(0.0), n0 > allowed, || {
            format!("level 0: n={n0} bound={bound} sigmas={:?} r={r} gamma={gamma}", schedule.sigmas())
        });
        for i in 1..levels - 1 {
            if trace.exits[i - 1] != ExitReason::EndSignal {
                continue;
            }
            let bound = switch_time_bound(betas[i], betas[i - 1], r)?;
            let n = trace.steps[i] as f64;
            let allowed = (bound + 1e-9).ceil().max(1.0);
            c.record((n - allowed).max(0.0), n > allowed, || {
                format!("level {i}: n={n} bound={bound} sigmas={:?} r={r} gamma={gamma}", schedule.sigmas())
            });
        }
    }
    Ok(c)
}

/// Simulates `t` erroneous last-level steps from a start within the previous
/// end-signal and checks the final distance whenever the premise holds.
/// `adversarial` aligns every error with the starting offset at norm
/// `E (1 - 1e-9)`, the worst case of the triangle inequality.
fn verify_guarantee<R: Rng + ?Sized>(trials: usize, adversarial: bool, rng: &mut R) -> Result<CheckResult> {
    let name = if adversarial { "last_level_guarantee_adversarial" } else { "last_level_guarantee" };
    let mut c = CheckResult::new(
        name,
        "r in (0,1], d in 1..=4, beta_prev in (0.01,1), E in (0,0.05), t in 0..=80, beta_last in (lhs, 1.5 lhs)",
    );
    for _ in 0..trials {
        let r = 1.0 - rng.random_range(0.0..0.99);
        let d = rng.random_range(1..=4usize);
        let beta_prev = rng.random_range(0.01..1.0);
        let e = rng.random_range(1e-6..0.05);
        let t = rng.random_range(0..=80u32);
        let lhs = last_level_guarantee(t, r, d, beta_prev, e, 0.0)?.conclusion_bound;
        let beta_last = lhs * (1.0 + rng.random_range(1e-9..0.5));
        let outcome = last_level_guarantee(t, r, d, beta_prev, e, beta_last)?;
        if !outcome.premise_holds {
            continue;
        }
        let yi = random_vec(rng, d, 3.0);
        let (offset, errors): (Vec<f64>, Vec<Vec<f64>>) = if adversarial {
            let sign: Vec<f64> = (0..d).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let offset = sign.iter().map(|s| s * beta_prev * (1.0 - 1e-9)).collect();
            let unit: Vec<f64> = sign.iter().map(|s| s / (d as f64).sqrt()).collect();
            let err = unit.iter().map(|u| u * e * (1.0 - 1e-9)).collect::<Vec<_>>();
            (offset, vec![err; t as usize])
        } else {
            let offset = random_vec(rng, d, beta_prev);
            let errs = (0..t)
                .map(|_| {
                    let norm = e * rng.random_range(0.0..1.0);
                    vector_with_norm(rng, d, norm)
                })
                .collect();
            (offset, errs)
        };
        let mut y: Vec<f64> = yi.iter().zip(&offset).map(|(a, b)| a + b).collect();
        for err in &errors {
            simulate_step(&mut y, &yi, r, Some(err));
        }
        let dist = norm2(&y.iter().zip(&yi).map(|(a, b)| a - b).collect::<Vec<_>>());
        c.record((dist - beta_last).max(0.0), dist >= beta_last, || {
            format!("r={r} d={d} beta_prev={beta_prev} E={e} t={t} beta_last={beta_last} dist={dist}")
        });
    }
    Ok(c)
}

/// Randomized verification of every closed form and bound in this module.
pub fn verify_all(trials: usize, seed: u64) -> Result<TheoryReport> {
    if trials == 0 {
        return error::config("at least one trial is required");
    }
    let mut rng = crate::seeded_rng(seed);
    let mut checks = Vec::new();

    let mut example = CheckResult::new("closed_form_example", "y0=1 yI=0 r=0.5 t=3");
    let got = closed_form_iterate(&[1.0], &[0.0], 0.5, 3)[0];
    example.record((got - 0.125).abs(), (got - 0.125).abs() > IDENTITY_TOL, || format!("got {got}"));
    checks.push(example);

    checks.push(verify_closed_form(trials, &mut rng));
    checks.push(verify_error_unrolling(trials, &mut rng));
    checks.push(verify_switch_time(trials, &mut rng)?);
    checks.push(verify_guarantee(trials, false, &mut rng)?);
    checks.push(verify_guarantee(trials, true, &mut rng)?);
    Ok(TheoryReport { seed, checks })
}

/// Last-level iterates of a noise-free run with the exact score, one row per step.
pub fn oracle_last_level_iterates(
    y0: &[f64],
    target: &[f64],
    rate: f64,
    steps: usize,
) -> Result<Array2<f64>> {
    check_rate(rate)?;
    let d = target.len();
    let mut out = Array2::zeros((steps + 1, d));
    let mut y = y0.to_vec();
    out.row_mut(0).assign(&ndarray::ArrayView1::from(&y));
    for t in 1..=steps {
        simulate_step(&mut y, target, rate, None);
        out.row_mut(t).assign(&ndarray::ArrayView1::from(&y));
    }
    Ok(out)
}

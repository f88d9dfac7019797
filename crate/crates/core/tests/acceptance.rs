//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and exits
//! nonzero if any fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssm::data::ToyTask;
use ssm::infer::{infer, ExitReason, GaussianScoreOracle, InferenceConfig, InitPolicy, ScoreFunction};
use ssm::report::{self, Evaluation, FittedModel, RunConfig};
use ssm::schedule::{loss_weight, NoiseSchedule};
use ssm::theory;
use ssm::train::level_losses;

type Outcome = Result<String, String>;

/// Score checkpoint bytes, conditioner bytes and test predictions.
type RunArtifacts = (Vec<u8>, Vec<u8>, Array2<f64>);

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_schedule() -> NoiseSchedule {
    NoiseSchedule::geometric(1.0, 0.01, 10).unwrap()
}

/// Last-level iterates of the oracle sampler against the closed form.
fn closed_form_conformance() -> Outcome {
    let schedule = oracle_schedule();
    let steps = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for &r in &[0.1, 0.2, 0.5, 0.9, 1.0, 1.5, 1.9] {
        let eps = r * schedule.last() * schedule.last();
        for &d in &[1usize, 4] {
            for _ in 0..4 {
                let target: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let start: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let mut ic = InferenceConfig::new(&schedule, eps, steps, 30, 0.01).map_err(|e| e.to_string())?;
                ic.record_iterates = true;
                ic.y0 = InitPolicy::Custom(start);
                let oracle = GaussianScoreOracle::new(&schedule, d);
                let (_, trace) = infer(&oracle, &target, &schedule, &ic).map_err(|e| e.to_string())?;
                let its = trace.iterates.as_ref().ok_or("iterates not recorded")?;
                let entry = its[schedule.len() - 2].last().ok_or("empty level")?.clone();
                let last = &its[schedule.len() - 1];
                if last.len() != steps {
                    return Err(format!("last level ran {} steps, expected {steps}", last.len()));
                }
                for (t, y) in last.iter().enumerate() {
                    let expect = theory::closed_form_iterate(&entry, &target, r, t as u32 + 1);
                    for (a, b) in y.iter().zip(&expect) {
                        worst = worst.max((a - b).abs());
                    }
                }
                runs += 1;
            }
        }
    }
    ensure(worst <= 1e-10, format!("runs={runs} steps={steps} max_abs_dev={worst:.3e}"))
}

fn theory_report() -> Result<theory::TheoryReport, String> {
    theory::verify_all(10_000, 2024).map_err(|e| e.to_string())
}

fn named_checks(names: &[&str]) -> Outcome {
    let report = theory_report()?;
    let mut parts = Vec::new();
    let mut ok = true;
    for name in names {
        let c = report.check(name).ok_or_else(|| format!("missing check {name}"))?;
        ok &= c.passed() && c.trials >= 10_000;
        parts.push(format!(
            "{name}: trials={} violations={} max_dev={:.3e}",
            c.trials, c.violations, c.max_abs_deviation
        ));
        if let Some(cx) = &c.counterexample {
            parts.push(format!("counterexample {cx}"));
        }
    }
    ensure(ok, parts.join("; "))
}

fn error_unrolling() -> Outcome {
    named_checks(&["error_unrolling"])
}

fn last_level_guarantee() -> Outcome {
    named_checks(&["last_level_guarantee", "last_level_guarantee_adversarial"])
}

fn switch_time_bound() -> Outcome {
    let ratio = 0.01f64.powf(1.0 / 9.0);
    let bound = theory::switch_time_bound(ratio, 1.0, 0.2).map_err(|e| e.to_string())?;
    let randomized = named_checks(&["switch_time"]);
    let detail = format!("worked bound={bound:.4}; {}", randomized.as_ref().unwrap_or_else(|e| e));
    ensure((2.0..=3.0).contains(&bound) && randomized.is_ok(), detail)
}

fn gradient_check() -> Outcome {
    let score = common::score_model_worst(100);
    let mlp = common::leaky_mlp_worst(100);
    let loss = common::dsm_loss_worst(100);
    ensure(
        score < common::TOL && mlp < common::TOL && loss < common::TOL,
        format!("max rel err: score net {score:.2e}, conditioner {mlp:.2e}, loss {loss:.2e}"),
    )
}

/// Score that is identically zero.
struct ZeroScore;

impl ScoreFunction for ZeroScore {
    fn output_dim(&self) -> usize {
        1
    }

    fn context(&self, xs: ArrayView2<f64>) -> ssm::Result<Array2<f64>> {
        Ok(xs.to_owned())
    }

    fn score(&self, ys: ArrayView2<f64>, _level: usize, _ctx: ArrayView2<f64>) -> ssm::Result<Array2<f64>> {
        Ok(Array2::zeros(ys.raw_dim()))
    }
}

fn loss_weighting_balance() -> Outcome {
    let schedule = NoiseSchedule::geometric(2.0, 0.01, 10).unwrap();
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array2::from_shape_simple_fn((n, 1), || rng.random_range(-1.0..1.0));
    let y = Array2::from_shape_simple_fn((n, 1), || rng.random_range(-1.0..1.0));
    let raw = level_losses(&ZeroScore, x.view(), y.view(), &schedule, 7).map_err(|e| e.to_string())?;
    let weighted = |k: f64| -> Vec<f64> {
        raw.iter().zip(schedule.sigmas()).map(|(l, &s)| loss_weight(s, k) * l).collect()
    };
    let k2 = weighted(2.0);
    let worst = k2.iter().map(|v| (v / 0.5 - 1.0).abs()).fold(0.0, f64::max);
    let k1 = weighted(1.0);
    let argmax = (0..k1.len()).max_by(|&a, &b| k1[a].total_cmp(&k1[b])).unwrap();
    ensure(
        worst <= 0.05 && argmax == schedule.len() - 1,
        format!(
            "k=2 max rel dev from d/2 {:.2}%; k=1 largest at level {} of {}",
            worst * 100.0,
            argmax + 1,
            schedule.len()
        ),
    )
}

struct ToyFit {
    cfg: RunConfig,
    ds: ssm::data::Dataset,
    fitted: FittedModel,
    fast: Evaluation,
    train_secs: f64,
}

fn fit_toy(task: ToyTask, epochs: usize) -> Result<ToyFit, String> {
    let mut cfg = RunConfig::for_task(task);
    cfg.epochs = epochs;
    let ds = report::prepare_data(&cfg).map_err(|e| e.to_string())?;
    let started = Instant::now();
    let fitted = report::fit(&cfg, &ds).map_err(|e| e.to_string())?;
    let train_secs = started.elapsed().as_secs_f64();
    let ic = report::inference_config(&cfg, &ds, &fitted.checkpoint.schedule, Some(fitted.report.network_error))
        .map_err(|e| e.to_string())?;
    let fast = report::evaluate(&cfg, &ds, &fitted.checkpoint, &fitted.conditioner, ic).map_err(|e| e.to_string())?;
    Ok(ToyFit {
        cfg,
        ds,
        fitted,
        fast,
        train_secs,
    })
}

const TOY_EPOCHS: usize = 1000;

fn toy_rmse(fit: &Result<ToyFit, String>, gate: f64) -> Outcome {
    let fit = fit.as_ref().map_err(|e| e.clone())?;
    let rmse = fit.fast.rmse.ok_or("no rmse")?;
    ensure(
        rmse <= gate,
        format!(
            "epochs={} rmse={rmse:.4} gate={gate} final_loss={:.4} train={:.0}s",
            fit.cfg.epochs,
            fit.fitted.report.epoch_losses.last().copied().unwrap_or(f64::NAN),
            fit.train_secs
        ),
    )
}

fn fast_sampling_budget(fit: &Result<ToyFit, String>) -> Outcome {
    let fit = fit.as_ref().map_err(|e| e.clone())?;
    let budget = (fit.cfg.levels - 1) * fit.cfg.step_cap + fit.fast.inference.last_steps;
    let mean = fit.fast.mean_total_steps();
    let mut cfg = fit.cfg.clone();
    cfg.fast = false;
    cfg.repeats = 1;
    let mut ic = fit.fast.inference.clone();
    ic.fast = false;
    let full = report::evaluate(&cfg, &fit.ds, &fit.fitted.checkpoint, &fit.fitted.conditioner, ic).map_err(|e| e.to_string())?;
    let ratio = fit.fast.median_wall().as_secs_f64() / full.median_wall().as_secs_f64();
    let early = fit
        .fast
        .batch
        .all_traces()
        .flat_map(|t| t.exits.iter())
        .filter(|e| **e == ExitReason::EndSignal)
        .count();
    ensure(
        mean <= 0.5 * budget as f64,
        format!(
            "mean steps {mean:.1} of {budget} ({:.1}%); wall fast/full {ratio:.3}; rmse fast {:.4} full {:.4}; early exits {early}",
            100.0 * mean / budget as f64,
            fit.fast.rmse.unwrap_or(f64::NAN),
            full.rmse.unwrap_or(f64::NAN)
        ),
    )
}

fn seeded_reproducibility() -> Outcome {
    let mut cfg = RunConfig::for_task(ToyTask::Sinusoidal);
    cfg.samples = 1024;
    cfg.epochs = 5;
    cfg.pretrain_epochs = 5;
    cfg.repeats = 2;
    cfg.use_noise = true;
    let run = || -> Result<RunArtifacts, String> {
        let ds = report::prepare_data(&cfg).map_err(|e| e.to_string())?;
        let fitted = report::fit(&cfg, &ds).map_err(|e| e.to_string())?;
        let ic = report::inference_config(&cfg, &ds, &fitted.checkpoint.schedule, Some(fitted.report.network_error))
            .map_err(|e| e.to_string())?;
        let eval = report::evaluate(&cfg, &ds, &fitted.checkpoint, &fitted.conditioner, ic).map_err(|e| e.to_string())?;
        let score = fitted.checkpoint.to_checkpoint().and_then(|c| c.to_bytes()).map_err(|e| e.to_string())?;
        let cond = fitted.conditioner.to_checkpoint().and_then(|c| c.to_bytes()).map_err(|e| e.to_string())?;
        Ok((score, cond, eval.predictions))
    };
    let (s1, c1, p1) = run()?;
    let (s2, c2, p2) = run()?;
    let same_preds = p1.iter().zip(p2.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(
        s1 == s2 && c1 == c2 && same_preds,
        format!(
            "score checkpoint {} bytes equal={}; conditioner equal={}; {} predictions bit-identical={same_preds}",
            s1.len(),
            s1 == s2,
            c1 == c2,
            p1.len()
        ),
    )
}

fn main() -> ExitCode {
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name:<28} {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name:<28} {detail}");
            }
        }
    };

    report("closed_form_conformance", &mut closed_form_conformance);
    report("error_unrolling", &mut error_unrolling);
    report("last_level_guarantee", &mut last_level_guarantee);
    report("switch_time_bound", &mut switch_time_bound);
    report("gradient_check", &mut gradient_check);

    let sinusoidal = fit_toy(ToyTask::Sinusoidal, TOY_EPOCHS);
    report("rmse_sinusoidal", &mut || toy_rmse(&sinusoidal, 0.02));
    drop(sinusoidal);
    let linear = fit_toy(ToyTask::Linear, TOY_EPOCHS);
    report("rmse_linear", &mut || toy_rmse(&linear, 0.15));
    report("fast_sampling_budget", &mut || fast_sampling_budget(&linear));
    drop(linear);
    let quadratic = fit_toy(ToyTask::Quadratic, TOY_EPOCHS);
    report("rmse_quadratic", &mut || toy_rmse(&quadratic, 0.25));
    drop(quadratic);

    report("loss_weighting_balance", &mut loss_weighting_balance);
    report("seeded_reproducibility", &mut seeded_reproducibility);

    println!("acceptance: {} failed", failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

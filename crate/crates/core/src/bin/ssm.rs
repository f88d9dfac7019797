use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ssm::data;
use ssm::model::{PretrainNet, ScoreCheckpoint};
use ssm::report::{self, RunConfig};
use ssm::{theory, Error, Result};

#[derive(Parser)]
#[command(name = "ssm", version, about = "Supervised score-based regression and classification")]
struct Cli {
    /// Directory for every artifact written by the command.
    #[arg(long, env = "SSM_OUT_DIR", default_value = "ssm-out", global = true)]
    out_dir: PathBuf,

    #[command(flatten)]
    run: RunFlags,

    #[command(subcommand)]
    command: Command,
}

/// Flags mirror the keys of the run-config file and override it.
#[derive(Args, Default)]
struct RunFlags {
    /// Flat `key = value` run-config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    task: Option<String>,
    /// CSV dataset instead of a toy task.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Comma-separated regression target columns of the CSV.
    #[arg(long, global = true)]
    targets: Option<String>,
    /// Integer class-label column of the CSV (classification).
    #[arg(long, global = true)]
    label: Option<String>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long = "L", global = true)]
    levels: Option<usize>,
    /// `auto` or a value.
    #[arg(long, global = true)]
    sigma_first: Option<String>,
    #[arg(long, global = true)]
    sigma_last: Option<f64>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Last-level steps, or `auto`.
    #[arg(long = "T", global = true)]
    last_steps: Option<String>,
    #[arg(long, global = true)]
    step_cap: Option<usize>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    k: Option<f64>,
    #[arg(long, global = true)]
    optimizer: Option<String>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    pretrain_epochs: Option<usize>,
    #[arg(long, global = true)]
    batch: Option<usize>,
    #[arg(long, global = true)]
    hidden: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `on` or `off`.
    #[arg(long, global = true)]
    noise: Option<String>,
    /// `on` or `off`.
    #[arg(long, global = true)]
    fast: Option<String>,
    #[arg(long, global = true)]
    repeats: Option<usize>,
}

impl RunFlags {
    fn lines(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push_str(&format!("{k} = {v}\n"));
            }
        };
        let s = |v: &Option<String>| v.clone();
        let d = |v: Option<f64>| v.map(|v| v.to_string());
        let u = |v: Option<usize>| v.map(|v| v.to_string());
        put("task", s(&self.task));
        put("data", self.data.as_ref().map(|p| p.display().to_string()));
        put("targets", s(&self.targets));
        put("label", s(&self.label));
        put("samples", u(self.samples));
        put("L", u(self.levels));
        put("sigma_first", s(&self.sigma_first));
        put("sigma_last", d(self.sigma_last));
        put("epsilon", d(self.epsilon));
        put("T", s(&self.last_steps));
        put("step_cap", u(self.step_cap));
        put("gamma", d(self.gamma));
        put("k", d(self.k));
        put("optimizer", s(&self.optimizer));
        put("learning_rate", d(self.learning_rate));
        put("epochs", u(self.epochs));
        put("pretrain_epochs", u(self.pretrain_epochs));
        put("batch", u(self.batch));
        put("hidden", u(self.hidden));
        put("seed", self.seed.map(|v| v.to_string()));
        put("noise", s(&self.noise));
        put("fast", s(&self.fast));
        put("repeats", u(self.repeats));
        out
    }

    /// Defaults, then the config file, then the flags.
    fn resolve(&self, base: Option<&RunConfig>) -> Result<RunConfig> {
        let mut text = base.map(|b| b.to_string()).unwrap_or_default();
        if let Some(path) = &self.config {
            text.push_str(&fs::read_to_string(path).map_err(|e| Error::Data {
                path: path.clone(),
                message: e.to_string(),
            })?);
            text.push('\n');
        }
        text.push_str(&self.lines());
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ModelPaths {
    /// Score-network checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Conditioner checkpoint.
    #[arg(long)]
    fphi: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset (with its split) to `data.csv`.
    Generate,
    /// Fit and freeze the conditioner; writes `fphi.ckpt`.
    Pretrain,
    /// Train the score network against a pretrained conditioner.
    Train {
        /// Conditioner checkpoint written by `pretrain`.
        #[arg(long)]
        fphi: Option<PathBuf>,
    },
    /// Predict the test split with a trained model.
    Infer {
        #[command(flatten)]
        paths: ModelPaths,
    },
    /// Noise x fast x k grid; trains two models.
    Ablate,
    /// Randomized verification of the refinement closed forms and bounds.
    TheoryCheck {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Metrics, step table and scatter figure for a trained model.
    Report {
        #[command(flatten)]
        paths: ModelPaths,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    fs::create_dir_all(&cli.out_dir)?;
    let out = |name: &str| cli.out_dir.join(name);
    match &cli.command {
        Command::Generate => {
            let cfg = cli.run.resolve(None)?;
            let ds = report::load_data(&cfg)?;
            data::save_csv(&ds, out("data.csv"))?;
            write_split(&ds, &out("split.csv"))?;
            println!("wrote {} rows to {}", ds.len(), out("data.csv").display());
        }
        Command::Pretrain => {
            let cfg = cli.run.resolve(None)?;
            let ds = report::prepare_data(&cfg)?;
            let net = report::pretrain(&cfg, &ds)?;
            save_pretrain(&net, &cfg, &out("fphi.ckpt"))?;
            println!("wrote {}", out("fphi.ckpt").display());
        }
        Command::Train { fphi } => {
            let fphi = fphi
                .as_ref()
                .ok_or_else(|| Error::Config("train needs --fphi <checkpoint>; run `ssm pretrain` first".into()))?;
            let cfg = cli.run.resolve(None)?;
            let conditioner = load_pretrain(fphi)?;
            let ds = report::prepare_data(&cfg)?;
            let (ckpt, rep) = report::train_score(&cfg, &ds, &conditioner)?;
            ckpt.save(out("score.ckpt"))?;
            let echo = cfg.echo_lines("# ");
            rep.write_csv(&echo, BufWriter::new(File::create(out("train_log.csv"))?))?;
            fs::write(out("train_summary.txt"), format!("{echo}{}", rep.summary()))?;
            println!("{}", rep.summary().trim_end());
            println!("wrote {}", out("score.ckpt").display());
        }
        Command::Infer { paths } => {
            let (cfg, ds, ckpt, conditioner) = load_run(cli, paths)?;
            let ev = evaluate(&cfg, &ds, &ckpt, &conditioner)?;
            let echo = cfg.echo_lines("# ");
            write_predictions(&ds, &ev, &echo, &out("predictions.csv"))?;
            let traces: Vec<_> = ev.batch.traces[0].clone();
            report::write_trace_csv(&traces, &echo, BufWriter::new(File::create(out("traces.csv"))?))?;
            write_metrics(&ev, &echo, &out("metrics.csv"))?;
            print_metrics(&ev)?;
        }
        Command::Ablate => {
            let cfg = cli.run.resolve(None)?;
            let ds = report::prepare_data(&cfg)?;
            let table = report::run_ablation(&cfg, &ds)?;
            table.write_csv(BufWriter::new(File::create(out("ablation.csv"))?))?;
            let text = table.to_text();
            fs::write(out("ablation.txt"), &text)?;
            print!("{text}");
        }
        Command::TheoryCheck { trials } => {
            let cfg = cli.run.resolve(None)?;
            let rep = theory::verify_all(*trials, cfg.seed)?;
            let mut f = BufWriter::new(File::create(out("theory.csv"))?);
            std::io::Write::write_all(&mut f, cfg.echo_lines("# ").as_bytes())?;
            rep.write_csv(f)?;
            print!("{}", rep.summary());
            if !rep.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report { paths } => {
            let (cfg, ds, ckpt, conditioner) = load_run(cli, paths)?;
            let ev = evaluate(&cfg, &ds, &ckpt, &conditioner)?;
            let echo = cfg.echo_lines("# ");
            write_metrics(&ev, &echo, &out("metrics.csv"))?;
            let table = report::report_step_table(ev.batch.all_traces())?;
            fs::write(out("steps.txt"), format!("{echo}{}", table.to_text()))?;
            print!("{}", table.to_text());
            if ds.input_dim() == 1 && ds.output_dim() == 1 {
                let raw_x = match &ds.x_stats {
                    Some(s) => s.invert(ds.test_x().view())?,
                    None => ds.test_x(),
                };
                let truth = match (&ds.truth, &ds.y_stats) {
                    (Some(_), _) => ds.test_truth(),
                    (None, Some(s)) => s.invert(ds.test_y().view())?,
                    (None, None) => ds.test_y(),
                };
                let col = |a: &ndarray::Array2<f64>| a.column(0).to_vec();
                report::emit_scatter(
                    &col(&raw_x),
                    &col(&ev.predictions),
                    &col(&truth),
                    out("scatter.svg"),
                    out("scatter.csv"),
                    &echo,
                )?;
                println!("wrote {}", out("scatter.svg").display());
            }
            print_metrics(&ev)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn save_pretrain(net: &PretrainNet, cfg: &RunConfig, path: &Path) -> Result<()> {
    let mut c = net.to_checkpoint()?;
    for (k, v) in cfg.echo() {
        c.push_header(&format!("config.{k}"), v);
    }
    c.save(path)
}

fn load_pretrain(path: &Path) -> Result<PretrainNet> {
    if !path.exists() {
        return Err(Error::Data {
            path: path.to_path_buf(),
            message: "conditioner checkpoint not found; run `ssm pretrain` first".into(),
        });
    }
    PretrainNet::load(path)
}

/// Checkpoints plus the configuration they were trained with, overridden by
/// any flags given now.
fn load_run(cli: &Cli, paths: &ModelPaths) -> Result<(RunConfig, data::Dataset, ScoreCheckpoint, PretrainNet)> {
    let model = paths.model.clone().unwrap_or_else(|| cli.out_dir.join("score.ckpt"));
    let fphi = paths.fphi.clone().unwrap_or_else(|| cli.out_dir.join("fphi.ckpt"));
    if !model.exists() {
        return Err(Error::Data {
            path: model,
            message: "score checkpoint not found; run `ssm train` first".into(),
        });
    }
    let ckpt = ScoreCheckpoint::load(&model)?;
    let conditioner = load_pretrain(&fphi)?;
    let mut trained = RunConfig::default();
    let echo: String = ckpt.config_echo.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    trained.apply_text(&echo)?;
    let cfg = cli.run.resolve(Some(&trained))?;
    let ds = report::prepare_data(&cfg)?;
    Ok((cfg, ds, ckpt, conditioner))
}

/// Network error is re-estimated on the training split when `T = auto`.
fn evaluate(cfg: &RunConfig, ds: &data::Dataset, ckpt: &ScoreCheckpoint, conditioner: &PretrainNet) -> Result<report::Evaluation> {
    let error = match cfg.last_steps {
        report::LastSteps::Auto => {
            let score = ssm::infer::ConditionalScore {
                model: &ckpt.model,
                conditioner,
            };
            Some(ssm::train::estimate_network_error(
                &score,
                ds.train_x().view(),
                ds.train_y().view(),
                &ckpt.schedule,
                cfg.epsilon,
                cfg.seed,
            )?)
        }
        report::LastSteps::Fixed(_) => None,
    };
    let ic = report::inference_config(cfg, ds, &ckpt.schedule, error)?;
    report::evaluate(cfg, ds, ckpt, conditioner, ic)
}

fn write_split(ds: &data::Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "split"])?;
    for &i in &ds.split.train {
        w.write_record([i.to_string(), "train".into()])?;
    }
    for &i in &ds.split.test {
        w.write_record([i.to_string(), "test".into()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_predictions(ds: &data::Dataset, ev: &report::Evaluation, echo: &str, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    std::io::Write::write_all(&mut f, echo.as_bytes())?;
    let mut w = csv::Writer::from_writer(f);
    let mut header = vec!["row".to_string()];
    header.extend(ds.target_names.iter().cloned());
    if header.len() == 1 {
        header.extend((0..ds.output_dim()).map(|j| format!("y{j}")));
    }
    w.write_record(&header)?;
    for (r, &i) in ds.split.test.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(ev.predictions.row(r).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_metrics(ev: &report::Evaluation, echo: &str, path: &Path) -> Result<()> {
    let mut text = String::from(echo);
    text.push_str("metric,value\n");
    if let Some(r) = ev.rmse {
        text.push_str(&format!("rmse,{r}\n"));
    }
    if let Some(a) = ev.accuracy {
        text.push_str(&format!("accuracy,{a}\n"));
    }
    text.push_str(&format!("mean_wall_s,{}\n", ev.mean_wall().as_secs_f64()));
    text.push_str(&format!("median_wall_s,{}\n", ev.median_wall().as_secs_f64()));
    text.push_str(&format!("mean_total_steps,{}\n", ev.mean_total_steps()));
    text.push_str(&format!("last_steps,{}\n", ev.inference.last_steps));
    fs::write(path, text)?;
    Ok(())
}

fn print_metrics(ev: &report::Evaluation) -> Result<()> {
    if let Some(r) = ev.rmse {
        println!("rmse: {r:.6}");
    }
    if let Some(a) = ev.accuracy {
        println!("accuracy: {a:.4}");
    }
    println!(
        "inference: median {:.4}s, mean total steps {:.2}",
        ev.median_wall().as_secs_f64(),
        ev.mean_total_steps()
    );
    Ok(())
}

//! The `nnarx` command-line driver.
//!
//! Exit codes:
//!
//! | code | meaning                                             |
//! |------|-----------------------------------------------------|
//! | 0    | success; for `certify`, the model is certified      |
//! | 1    | `certify` only: model not certified                 |
//! | 2    | malformed file (model, manifest, config)            |
//! | 3    | invalid configuration or argument                   |
//! | 4    | I/O error                                           |
//! | 5    | training failure or other numerical failure         |

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, plot_csv};
use crate::io::{load_dataset, load_model, save_dataset, save_model, write_file};
use crate::model::NnarxModel;
use crate::plant::{build_dataset, mprs::mprs_with_rng, Split};
use crate::seeds::{stream, Purpose};
use crate::stability::{certify_with_margin, contraction_probe, explosive_demo_model, lyapunov_decrease_probe};
use crate::training::train;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CERTIFIED: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_FAILURE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "nnarx", version, about = "Neural NARX identification with stability certificates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a plant and write a dataset (CSV per trajectory + manifest).
    Generate(GenerateArgs),
    /// Train a model on a dataset; writes model, history and certificate.
    Train(TrainArgs),
    /// Check the stability certificate of a model file.
    Certify(CertifyArgs),
    /// Open-loop evaluation of a model on one dataset split.
    Evaluate(EvaluateArgs),
    /// Contraction and incremental-Lyapunov probes on trajectory pairs.
    Probe(ProbeArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output directory for the dataset (default: <output_dir>/dataset).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset directory or manifest path.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory (default: <output_dir>/train).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    pub model: PathBuf,
    /// Require `nu < -margin` instead of `nu < 0`.
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Samples excluded at the start of every trajectory.
    #[arg(long, default_value_t = 20)]
    pub washout: usize,
    /// Output directory for report.csv, summary.json and plot.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model file to probe; exclusive with --explosive-demo.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Probe the built-in unstable scalar model `y+ = 2 y`.
    #[arg(long)]
    pub explosive_demo: bool,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Start both trajectories of each pair from the same state.
    #[arg(long)]
    pub identical: bool,
    /// CSV output path (default: stdout summary only).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Schema(_) => EXIT_SCHEMA,
        Error::InvalidArgument(_) | Error::InvalidConfig(_) | Error::InvalidModel(_) | Error::Normalization(_) => {
            EXIT_CONFIG
        }
        Error::Io(_) => EXIT_IO,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Certify(a) => cmd_certify(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Probe(a) => cmd_probe(&a),
    }
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<i32> {
    let mut cfg = load_config(&a.common)?;
    if let Some(n) = a.n_train {
        cfg.dataset.n_train = n;
    }
    if let Some(n) = a.n_val {
        cfg.dataset.n_val = n;
    }
    if let Some(n) = a.n_test {
        cfg.dataset.n_test = n;
    }
    if let Some(n) = a.length {
        cfg.dataset.trajectory_length = n;
    }
    let plant = cfg.build_plant()?;
    let ds = build_dataset(plant.as_ref(), &cfg.dataset.to_spec(cfg.seed))?;
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.join("dataset"));
    let manifest = save_dataset(&out, &ds)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    println!("{}", manifest.display());
    Ok(EXIT_OK)
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let mut cfg = load_config(&a.common)?;
    if let Some(e) = a.max_epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(t) = a.threads {
        cfg.train.threads = t;
    }
    let ds = load_dataset(&a.dataset)?;
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.join("train"));
    std::fs::create_dir_all(&out)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    let traj_len = ds.trajectories.iter().map(|t| t.len()).min().unwrap_or(0);

    let train_cfg = cfg.train_config();
    let (model, history) = match train(&ds, &cfg.model, &train_cfg) {
        Ok(r) => r,
        Err(Error::TrainingFailure { reason, history }) => {
            write_file(&out.join("history.csv"), &history.to_csv(traj_len))?;
            return Err(Error::TrainingFailure { reason, history });
        }
        Err(e) => return Err(e),
    };
    write_file(&out.join("history.csv"), &history.to_csv(traj_len))?;
    let meta = serde_json::json!({
        "master_seed": cfg.seed,
        "dataset": a.dataset.display().to_string(),
        "dataset_seed": ds.provenance.spec.seed,
        "best_epoch": history.best_epoch,
        "epochs_run": history.records.len(),
        "config": serde_json::to_value(&cfg).unwrap_or(serde_json::Value::Null),
    });
    save_model(&out.join("model.json"), &model, Some(meta))?;
    let report = certify_with_margin(&model, cfg.certify_margin)?;
    write_file(
        &out.join("certificate.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    write_file(&out.join("certificate.txt"), &report.to_table())?;
    println!(
        "epochs: {}  best: {:?}  nu: {:.6}  {}",
        history.records.len(),
        history.best_epoch,
        report.nu,
        report.verdict
    );
    println!("{}", out.join("model.json").display());
    Ok(EXIT_OK)
}

pub fn cmd_certify(a: &CertifyArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&a.model)?;
    let (model, _) = crate::io::model_from_json(&text)?;
    let report = certify_with_margin(&model, a.margin)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if a.json {
        println!("{json}");
    } else {
        print!("{}", report.to_table());
    }
    if let Some(out) = &a.out {
        write_file(out, &json)?;
    }
    Ok(if report.verdict.is_certified() {
        EXIT_OK
    } else {
        EXIT_NOT_CERTIFIED
    })
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<i32> {
    let model = load_model(&a.model)?;
    let ds = load_dataset(&a.dataset)?;
    let split: Split = a.split.parse()?;
    let (summary, traces) = evaluate(&model, &ds, split, a.washout)?;
    if let Some(out) = &a.out {
        write_file(&out.join("report.csv"), &summary.to_csv())?;
        write_file(
            &out.join("summary.json"),
            &serde_json::to_string_pretty(&serde_json::json!({
                "schema_version": 1,
                "model": a.model.display().to_string(),
                "dataset": a.dataset.display().to_string(),
                "summary": summary,
            }))
            .expect("summary serializes"),
        )?;
        write_file(&out.join("plot.csv"), &plot_csv(&traces))?;
    }
    println!(
        "split: {}  trajectories: {}  diverged: {}  FIT (aggregate, physical units): {:.4}",
        split.as_str(),
        summary.reports.len(),
        summary.diverged_count,
        summary.aggregate_fit
    );
    Ok(EXIT_OK)
}

/// Probe traces for `pairs` random initial-state pairs under one shared
/// MPRS input. Returns CSV text and the worst final distance ratio.
pub fn probe_traces(
    model: &NnarxModel,
    cfg: &crate::config::ProbeConfig,
    seed: u64,
    identical: bool,
) -> Result<(String, f64, usize)> {
    let mut rng = stream(seed, Purpose::Probe, 0);
    let u_seq: Vec<Vec<f64>> = {
        let channels = (0..model.input_dim)
            .map(|_| mprs_with_rng(&cfg.excitation, cfg.horizon, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        (0..cfg.horizon).map(|k| channels.iter().map(|c| c[k]).collect()).collect()
    };
    let mut csv = String::from("pair,k,distance,delta_v,bound\n");
    let mut worst: f64 = 0.0;
    let mut diverged = 0;
    for pair in 0..cfg.pairs {
        let mut draw = || -> Vec<f64> {
            (0..model.state_dim())
                .map(|_| rng.random_range(-cfg.init_scale..=cfg.init_scale))
                .collect()
        };
        let xa = model.state_from_vec(draw())?;
        let xb = if identical { xa.clone() } else { model.state_from_vec(draw())? };
        let trace = contraction_probe(model, &xa, &xb, &u_seq, cfg.horizon)?;
        let (mut sa, mut sb) = (xa, xb);
        for (k, d) in trace.distances.iter().enumerate() {
            let (dv, bound) = if k < cfg.horizon && trace.diverged_at.is_none_or(|s| k + 1 < s) {
                let r = lyapunov_decrease_probe(model, &sa, &sb, &u_seq[k], &u_seq[k])?;
                sa = model.step(&sa, &u_seq[k])?.0;
                sb = model.step(&sb, &u_seq[k])?.0;
                (r.delta_v.to_string(), r.bound.to_string())
            } else {
                (String::new(), String::new())
            };
            csv.push_str(&format!("{pair},{k},{d},{dv},{bound}\n"));
        }
        if let Some(step) = trace.diverged_at {
            diverged += 1;
            worst = f64::INFINITY;
            csv.push_str(&format!("{pair},{step},inf,,\n"));
        } else if trace.initial() > 0.0 {
            worst = worst.max(trace.last() / trace.initial());
        }
    }
    Ok((csv, worst, diverged))
}

pub fn cmd_probe(a: &ProbeArgs) -> Result<i32> {
    let cfg = load_config(&a.common)?;
    let model = match (&a.model, a.explosive_demo) {
        (Some(p), false) => load_model(p)?,
        (None, true) => explosive_demo_model(2.0)?,
        _ => return Err(Error::config("give exactly one of --model or --explosive-demo")),
    };
    let mut pcfg = cfg.probe.clone();
    if let Some(h) = a.horizon {
        pcfg.horizon = h;
    }
    if let Some(p) = a.pairs {
        pcfg.pairs = p;
    }
    if a.explosive_demo {
        // the scalar demo model is driven by zero input
        pcfg.excitation.levels = vec![0.0];
    }
    let (csv, worst, diverged) = probe_traces(&model, &pcfg, cfg.seed, a.identical)?;
    if let Some(out) = &a.out {
        write_file(out, &csv)?;
    }
    println!(
        "pairs: {}  horizon: {}  diverged: {}  worst final distance ratio: {:e}",
        pcfg.pairs, pcfg.horizon, diverged, worst
    );
    if diverged > 0 {
        println!("divergence detected: model is unstable along the probed trajectories");
    }
    Ok(EXIT_OK)
}

/// Resolves a path the way the commands do, for tests and scripts.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(crate::io::MANIFEST_FILE)
}

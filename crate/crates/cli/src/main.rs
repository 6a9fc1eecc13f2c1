use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use underdet_core::{run_experiment, Experiment, ExperimentConfig, ModelFamily, ShotConfig};

/// Underdetermination experiments for parameterized quantum circuits.
#[derive(Debug, Parser)]
#[command(name = "underdet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Iris ensemble: Hessian spectra and score/std correlation.
    IrisCorrelation(RunArgs),
    /// Sine regression with out-of-domain test points.
    SineOod(RunArgs),
    /// Linear regression with out-of-domain test points.
    LinearOod(RunArgs),
    /// Sine task retrained at several shot counts.
    NoiseSweep(RunArgs),
    /// Fashion-MNIST scores under test-image rotation.
    FmnistRotation(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON file with config fields; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ensemble size.
    #[arg(long)]
    members: Option<usize>,
    /// Number of large-curvature directions removed.
    #[arg(long)]
    m: Option<usize>,
    /// Comma-separated shot counts, `analytic` for exact expectations.
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<ShotConfig>>,
    /// Comma-separated rotation angles in degrees.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    angles: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    family: Option<ModelFamily>,
    /// Output root; each run writes `{experiment}_{seed}/`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fashion-MNIST training images per class.
    #[arg(long)]
    train_per_class: Option<usize>,
    /// Fashion-MNIST test images per class.
    #[arg(long)]
    test_per_class: Option<usize>,
    /// IDX image file (gzip accepted).
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file (gzip accepted).
    #[arg(long)]
    labels: Option<PathBuf>,
}

impl Command {
    fn split(self) -> (Experiment, RunArgs) {
        match self {
            Command::IrisCorrelation(a) => (Experiment::IrisCorrelation, a),
            Command::SineOod(a) => (Experiment::SineOod, a),
            Command::LinearOod(a) => (Experiment::LinearOod, a),
            Command::NoiseSweep(a) => (Experiment::NoiseSweep, a),
            Command::FmnistRotation(a) => (Experiment::FmnistRotation, a),
        }
    }
}

fn build_config(experiment: Experiment, args: RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let mut cfg = ExperimentConfig::from_json(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
            anyhow::ensure!(
                cfg.experiment == experiment,
                "config file is for {}, but the subcommand is {}",
                cfg.experiment,
                experiment
            );
            cfg.experiment = experiment;
            cfg
        }
        None => ExperimentConfig::new(experiment, 0),
    };
    macro_rules! take {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag {
                $field = Some(v);
            }
        };
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    take!(args.members => cfg.n_members);
    take!(args.m => cfg.m);
    take!(args.shots => cfg.shots);
    take!(args.angles => cfg.angles);
    take!(args.epochs => cfg.epochs);
    take!(args.batch => cfg.batch_size);
    take!(args.lr => cfg.learning_rate);
    take!(args.family => cfg.family);
    take!(args.train_per_class => cfg.train_per_class);
    take!(args.test_per_class => cfg.test_per_class);
    take!(args.out => cfg.output_dir);
    take!(args.images => cfg.images);
    take!(args.labels => cfg.labels);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let (experiment, args) = cli.command.split();
    let cfg = build_config(experiment, args)?;
    let report = run_experiment(&cfg)?;
    let root = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let dir = report
        .write(&root)
        .with_context(|| format!("writing results under {}", root.display()))?;
    let out = json!({
        "status": "ok",
        "experiment": experiment.name(),
        "output": dir,
        "summary": report.summary,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .downcast_ref::<underdet_core::Error>()
                .map_or("error", underdet_core::Error::kind);
            let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
            let obj = json!({ "status": "error", "kind": kind, "message": chain.join(": ") });
            eprintln!("{obj}");
            ExitCode::FAILURE
        }
    }
}

//! Command-line surface: dataset generation, training, evaluation,
//! hyperparameter search, and manifest-driven experiment runs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
//! divergence, 1 anything else. Errors print as a single
//! `error[category]: message` line on stderr.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Axis;

use cde::checkpoint::{self, write_atomic};
use cde::data::synthetic::{generate, SyntheticDataset, SyntheticSpec};
use cde::data::{discretize, split, SplitFractions};
use cde::error::{Error, Result};
use cde::eval::experiment::{
    plot_data, prepare_synthetic_trial, run_experiment, ExperimentManifest, ExperimentReport,
    RunOptions,
};
use cde::eval::{grid_search, test_log_prob, test_rmse, SearchGrid};
use cde::models::{train, ModelKind, TrainConfig};
use cde::rng::{derive_seed, stream};

#[derive(Parser)]
#[command(
    name = "cde",
    version,
    about = "Conditional density estimation over discretized targets",
    propagate_version = true
)]
struct Cli {
    /// Print progress and timing to stderr
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known per-class target densities
    Synth(SynthArgs),
    /// Train one model on a synthetic dataset file and write a checkpoint
    Train(TrainArgs),
    /// Score a checkpoint on a dataset file
    Eval(EvalArgs),
    /// Hyperparameter search selected on validation log-probability
    Gridsearch(GridSearchArgs),
    /// Execute an experiment manifest end to end and write the report
    Run(RunArgs),
    /// Sweep synthetic sample sizes and tabulate test log-probability
    PlotData(PlotDataArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of classes (also the one-hot feature width)
    #[arg(long)]
    classes: usize,
    /// Total rows to generate
    #[arg(long)]
    samples: usize,
    /// Target bins over the unit interval
    #[arg(long)]
    bins: usize,
    #[arg(long)]
    seed: u64,
    /// Gaussian noise scale added to the one-hot features
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Output JSON path (dataset + ground truth)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SplitArgs {
    /// Training fraction of the rows
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    /// Validation fraction of the rows (test gets the remainder)
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
}

impl SplitArgs {
    fn fractions(&self) -> SplitFractions {
        SplitFractions {
            train: self.train_frac,
            val: self.val_frac,
        }
    }
}

#[derive(Args, Clone)]
struct TrainHyperArgs {
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Hidden layer widths, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 64])]
    hidden: Vec<usize>,
    /// Train one independent network per partition node (multiscale only)
    #[arg(long)]
    per_node: bool,
}

impl TrainHyperArgs {
    fn apply(&self, config: &mut TrainConfig) {
        config.epochs = self.epochs;
        config.batch_size = self.batch_size;
        config.learning_rate = self.learning_rate;
        config.hidden = self.hidden.clone();
        config.multiscale_per_node = self.per_node;
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset JSON produced by `synth`
    #[arg(long)]
    data: PathBuf,
    /// multiscale | cde_tf | multinomial | mdn | point
    #[arg(long)]
    model: ModelKind,
    /// Trend-filtering penalty weight
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Trend-filtering penalty order
    #[arg(long, default_value_t = 0)]
    k: usize,
    /// Mixture components for the mdn model
    #[arg(long, default_value_t = 3)]
    m_components: usize,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    hyper: TrainHyperArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    All,
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset JSON produced by `synth`
    #[arg(long)]
    data: PathBuf,
    /// Which rows to score
    #[arg(long, value_enum, default_value_t = SplitChoice::All)]
    split: SplitChoice,
    /// Seed that produced the split (required unless --split all)
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    split_args: SplitArgs,
    /// Write the metrics JSON here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridSearchArgs {
    /// Dataset JSON produced by `synth`
    #[arg(long)]
    data: PathBuf,
    /// cde_tf | mdn (other models have nothing to search)
    #[arg(long)]
    model: ModelKind,
    #[arg(long)]
    seed: u64,
    /// Penalty weights to try
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Penalty orders to try
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Mixture counts to try
    #[arg(long, value_delimiter = ',')]
    ms: Option<Vec<usize>>,
    #[command(flatten)]
    hyper: TrainHyperArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Output JSON path for the best cell and the full table
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment manifest JSON
    #[arg(long)]
    manifest: PathBuf,
    /// Report path; overrides the manifest's output field
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel jobs; overrides the manifest's worker count
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct PlotDataArgs {
    /// Synthetic experiment manifest JSON
    #[arg(long)]
    manifest: PathBuf,
    /// Training-set sizes to sweep, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Parallel jobs; overrides the manifest's worker count
    #[arg(long)]
    workers: Option<usize>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error[{}]: {e}", e.category());
        std::process::exit(e.exit_code());
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gridsearch(args) => cmd_gridsearch(args),
        Command::Run(args) => cmd_run(args, cli.verbose),
        Command::PlotData(args) => cmd_plot_data(args, cli.verbose),
    }
}

fn load_dataset(path: &Path) -> Result<SyntheticDataset> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read dataset {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Data(format!("{} is not a dataset file: {e}", path.display())))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec::random(args.classes, args.bins, args.noise, args.seed)?;
    let synth = generate(&spec, args.samples)?;
    let json = serde_json::to_vec_pretty(&synth)?;
    write_atomic(&args.out, &json)?;
    println!(
        "wrote {} rows ({} classes, {} bins) to {}",
        args.samples,
        args.classes,
        args.bins,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let synth = load_dataset(&args.data)?;
    let split_seed = derive_seed(args.seed, stream::SPLIT);
    let prepared = prepare_synthetic_trial(&synth, args.split.fractions(), split_seed)?;

    let mut config = TrainConfig::new(args.model, args.seed);
    config.lambda = args.lambda;
    config.k = args.k;
    config.m_components = args.m_components;
    args.hyper.apply(&mut config);

    let model = train(&config, &prepared.train)?;
    checkpoint::save(&args.out, &model)?;
    println!(
        "trained {} on {} rows, checkpoint at {}",
        args.model.name(),
        prepared.train.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = checkpoint::load(&args.checkpoint)?;
    let synth = load_dataset(&args.data)?;

    let rows: Vec<usize> = match args.split {
        SplitChoice::All => (0..synth.dataset.len()).collect(),
        choice => {
            let seed = args.seed.ok_or_else(|| {
                Error::Config("--seed is required when scoring a train/val/test split".into())
            })?;
            let split_seed = derive_seed(seed, stream::SPLIT);
            let idx = split(synth.dataset.len(), args.split_args.fractions(), split_seed)?;
            match choice {
                SplitChoice::Train => idx.train,
                SplitChoice::Val => idx.val,
                SplitChoice::Test => idx.test,
                SplitChoice::All => unreachable!(),
            }
        }
    };
    let features = synth.dataset.features.select(Axis(0), &rows);
    let targets = synth.dataset.targets.select(Axis(0), &rows);

    let log_prob = match model.grid() {
        Some(grid) => {
            let labels = discretize(&targets, grid)?;
            test_log_prob(&model, &features, &labels)?
        }
        None => None,
    };
    let rmse = test_rmse(&model, &features, &targets)?;

    let metrics = serde_json::json!({
        "model": model.kind().name(),
        "examples": rows.len(),
        "log_prob": log_prob,
        "rmse": rmse,
    });
    let rendered = serde_json::to_string_pretty(&metrics)?;
    match args.out {
        Some(path) => write_atomic(&path, rendered.as_bytes())?,
        None => println!("{rendered}"),
    }
    Ok(())
}

fn cmd_gridsearch(args: GridSearchArgs) -> Result<()> {
    let synth = load_dataset(&args.data)?;
    let split_seed = derive_seed(args.seed, stream::SPLIT);
    let prepared = prepare_synthetic_trial(&synth, args.split.fractions(), split_seed)?;

    let mut search = SearchGrid::default();
    if let Some(l) = args.lambdas {
        search.lambdas = l;
    }
    if let Some(k) = args.ks {
        search.ks = k;
    }
    if let Some(m) = args.ms {
        search.ms = m;
    }
    let mut base = TrainConfig::new(args.model, args.seed);
    args.hyper.apply(&mut base);

    let outcome = grid_search(
        &search,
        &base,
        &prepared.train,
        &prepared.val_features,
        &prepared.val_labels,
    )?;
    let best = outcome.best();
    let result = serde_json::json!({
        "model": args.model.name(),
        "best": best,
        "table": outcome.table,
    });
    write_atomic(&args.out, serde_json::to_string_pretty(&result)?.as_bytes())?;
    println!(
        "best cell: lambda={} k={} m={} val_log_prob={:?}",
        best.lambda, best.k, best.m_components, best.val_log_prob
    );
    Ok(())
}

fn read_manifest(path: &Path) -> Result<ExperimentManifest> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Config(format!("{} is not a valid manifest: {e}", path.display())))
}

fn write_report(report: &ExperimentReport, path: &Path) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(report)?.as_bytes())?;
    // flat metric rows alongside, for plotting
    let csv_path = path.with_extension("csv");
    let mut csv = String::from("model,trial,metric,value\n");
    for (model, trial, metric, value) in report.flat_rows() {
        csv.push_str(&format!("{model},{trial},{metric},{value}\n"));
    }
    write_atomic(&csv_path, csv.as_bytes())
}

fn cmd_run(args: RunArgs, verbose: bool) -> Result<()> {
    let manifest = read_manifest(&args.manifest)?;
    let out = args
        .out
        .clone()
        .or_else(|| manifest.output.clone())
        .ok_or_else(|| {
            Error::Config("no output path: pass --out or set \"output\" in the manifest".into())
        })?;
    let report = run_experiment(
        &manifest,
        RunOptions {
            workers: args.workers,
            verbose,
        },
    )?;
    write_report(&report, &out)?;
    for m in &report.models {
        println!(
            "{:<12} mean_log_prob={} mean_rmse={:.4}",
            m.model.name(),
            m.mean_log_prob
                .map_or("n/a".to_string(), |v| format!("{v:.4}")),
            m.mean_rmse
        );
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn cmd_plot_data(args: PlotDataArgs, verbose: bool) -> Result<()> {
    let manifest = read_manifest(&args.manifest)?;
    let rows = plot_data(
        &manifest,
        &args.sizes,
        RunOptions {
            workers: args.workers,
            verbose,
        },
    )?;
    let mut csv = String::from("samples,model,mean_log_prob\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{}\n",
            row.samples, row.model, row.mean_log_prob
        ));
    }
    write_atomic(&args.out, csv.as_bytes())?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

//! Experiment orchestration: a JSON manifest names a dataset, a model
//! list, and trial count; each trial splits the data, fits the grid,
//! grid-searches where applicable, and scores the winner on the test
//! split. Reports are deterministic functions of (manifest, seed): wall
//! clock goes to stderr, never into the report.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::synthetic::{generate, SyntheticDataset, SyntheticSpec};
use crate::data::{discretize, split, Dataset, SplitFractions, Standardization};
use crate::error::{Error, Result};
use crate::grid::DiscretizationGrid;
use crate::models::{ModelKind, TrainConfig, TrainData};
use crate::nn::{Activation, OptimizerKind};
use crate::rng::{derive_seed, stream};

use super::{
    grid_search, mdn_continuous_log_prob, test_log_prob, test_rmse, GridCellResult, SearchGrid,
    PROB_FLOOR,
};

/// Where a manifest's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetRef {
    /// Generated per trial from a trial-derived seed.
    Synthetic {
        classes: usize,
        /// Total rows generated; the split fractions then apply.
        samples: usize,
        bins: usize,
        #[serde(default = "default_noise")]
        feature_noise: f64,
    },
    /// Loaded once; trials differ in their split seed.
    Csv {
        path: String,
        feature_cols: Vec<String>,
        target_cols: Vec<String>,
        /// Per-target-dimension bin counts for the fitted grid.
        bins: Vec<usize>,
        #[serde(default)]
        standardize: bool,
    },
}

fn default_noise() -> f64 {
    0.05
}

/// Training settings shared by every model in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDefaults {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_act")]
    pub activation: Activation,
    #[serde(default = "d_opt")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub multiscale_per_node: bool,
}

fn d_epochs() -> usize {
    200
}
fn d_batch() -> usize {
    32
}
fn d_lr() -> f64 {
    1e-3
}
fn d_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn d_act() -> Activation {
    Activation::Relu
}
fn d_opt() -> OptimizerKind {
    OptimizerKind::Adam
}

impl Default for TrainDefaults {
    fn default() -> Self {
        TrainDefaults {
            epochs: d_epochs(),
            batch_size: d_batch(),
            learning_rate: d_lr(),
            hidden: d_hidden(),
            activation: d_act(),
            optimizer: d_opt(),
            multiscale_per_node: false,
        }
    }
}

impl TrainDefaults {
    pub fn to_config(&self, model: ModelKind, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(model, seed);
        c.epochs = self.epochs;
        c.batch_size = self.batch_size;
        c.learning_rate = self.learning_rate;
        c.hidden = self.hidden.clone();
        c.activation = self.activation;
        c.optimizer = self.optimizer;
        c.multiscale_per_node = self.multiscale_per_node;
        c
    }
}

/// Full experiment description, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub dataset: DatasetRef,
    pub models: Vec<ModelKind>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub fractions: SplitFractions,
    #[serde(default)]
    pub search: SearchGrid,
    #[serde(default)]
    pub train: TrainDefaults,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "d_workers")]
    pub workers: usize,
}

fn d_workers() -> usize {
    1
}

impl ExperimentManifest {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("manifest lists no models".into()));
        }
        self.fractions.validate()?;
        self.search.validate()?;
        match &self.dataset {
            DatasetRef::Synthetic {
                classes,
                samples,
                bins,
                feature_noise,
            } => {
                if *classes == 0 || *samples == 0 || *bins == 0 {
                    return Err(Error::Config(
                        "synthetic dataset needs classes, samples, and bins >= 1".into(),
                    ));
                }
                if feature_noise.is_nan() || *feature_noise < 0.0 {
                    return Err(Error::Config("feature noise must be >= 0".into()));
                }
            }
            DatasetRef::Csv {
                bins,
                feature_cols,
                target_cols,
                ..
            } => {
                if bins.is_empty() || bins.contains(&0) {
                    return Err(Error::Config(
                        "csv dataset needs per-dimension bins >= 1".into(),
                    ));
                }
                if feature_cols.is_empty() || target_cols.is_empty() {
                    return Err(Error::Config(
                        "csv dataset needs feature and target columns".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Everything a trial's training and scoring needs.
#[derive(Debug)]
pub struct PreparedSplits {
    pub train: TrainData,
    pub val_features: Array2<f64>,
    pub val_labels: Vec<usize>,
    pub test_features: Array2<f64>,
    pub test_labels: Vec<usize>,
    pub test_targets: Array2<f64>,
    pub grid: DiscretizationGrid,
    /// Ground-truth mean test log-probability, when the generator's truth
    /// is known (synthetic data only).
    pub oracle_log_prob: Option<f64>,
}

/// Split a synthetic dataset on its generator grid and score the oracle on
/// the test rows.
pub fn prepare_synthetic_trial(
    synth: &SyntheticDataset,
    fractions: SplitFractions,
    split_seed: u64,
) -> Result<PreparedSplits> {
    let idx = split(synth.dataset.len(), fractions, split_seed)?;
    let grid = synth.grid.clone();
    let (train_f, train_t) = synth.dataset.select(&idx.train);
    let (val_f, val_t) = synth.dataset.select(&idx.val);
    let (test_f, test_t) = synth.dataset.select(&idx.test);

    let train = TrainData {
        bin_labels: discretize(&train_t, &grid)?,
        features: train_f,
        targets: train_t,
        grid: grid.clone(),
    };
    let val_labels = discretize(&val_t, &grid)?;
    let test_labels = discretize(&test_t, &grid)?;

    let mut oracle = 0.0;
    for (&row, &label) in idx.test.iter().zip(&test_labels) {
        let class = synth.class_labels[row];
        oracle += synth.ground_truth[class].prob(label).max(PROB_FLOOR).ln();
    }
    let oracle = oracle / idx.test.len() as f64;

    Ok(PreparedSplits {
        train,
        val_features: val_f,
        val_labels,
        test_features: test_f,
        test_labels,
        test_targets: test_t,
        grid,
        oracle_log_prob: Some(oracle),
    })
}

/// Split a loaded dataset, optionally standardize features on training
/// statistics, and fit the grid to the training targets.
pub fn prepare_csv_trial(
    dataset: &Dataset,
    bins: &[usize],
    standardize: bool,
    fractions: SplitFractions,
    split_seed: u64,
) -> Result<PreparedSplits> {
    let idx = split(dataset.len(), fractions, split_seed)?;
    let mut features = dataset.features.clone();
    if standardize {
        Standardization::fit(&features, &idx.train)?.apply(&mut features);
    }
    let grid = {
        let train_targets = dataset.targets.select(ndarray::Axis(0), &idx.train);
        DiscretizationGrid::fit(&train_targets, bins)?
    };
    let take = |rows: &[usize]| {
        (
            features.select(ndarray::Axis(0), rows),
            dataset.targets.select(ndarray::Axis(0), rows),
        )
    };
    let (train_f, train_t) = take(&idx.train);
    let (val_f, val_t) = take(&idx.val);
    let (test_f, test_t) = take(&idx.test);

    let train = TrainData {
        bin_labels: discretize(&train_t, &grid)?,
        features: train_f,
        targets: train_t,
        grid: grid.clone(),
    };
    let val_labels = discretize(&val_t, &grid)?;
    let test_labels = discretize(&test_t, &grid)?;

    Ok(PreparedSplits {
        train,
        val_features: val_f,
        val_labels,
        test_features: test_f,
        test_labels,
        test_targets: test_t,
        grid,
        oracle_log_prob: None,
    })
}

/// One model's scores on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    pub seed: u64,
    /// Discrete test log-probability; absent for the point model.
    pub log_prob: Option<f64>,
    /// Continuous mixture log density (MDN only).
    pub continuous_log_prob: Option<f64>,
    /// Ground-truth log-probability on the same test rows (synthetic only).
    pub oracle_log_prob: Option<f64>,
    pub rmse: f64,
    pub selected_lambda: f64,
    pub selected_k: usize,
    pub selected_m: usize,
    pub val_log_prob: Option<f64>,
    /// Full validation table of the search, for audit.
    pub search: Vec<GridCellResult>,
}

/// Per-model aggregate over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: ModelKind,
    pub trials: Vec<TrialMetrics>,
    pub mean_log_prob: Option<f64>,
    pub mean_continuous_log_prob: Option<f64>,
    pub mean_oracle_log_prob: Option<f64>,
    pub mean_rmse: f64,
    pub seeds: Vec<u64>,
    /// Kept out of persisted reports so identical runs serialize
    /// identically; timing is printed to stderr instead.
    pub wall_clock_secs: Option<f64>,
}

/// The full experiment result: manifest echo plus one report per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub manifest: ExperimentManifest,
    pub models: Vec<ModelReport>,
}

impl ExperimentReport {
    /// Flat (model, trial, metric, value) rows for external plotting.
    pub fn flat_rows(&self) -> Vec<(String, usize, String, f64)> {
        let mut rows = Vec::new();
        for m in &self.models {
            for t in &m.trials {
                let model = m.model.name().to_string();
                if let Some(lp) = t.log_prob {
                    rows.push((model.clone(), t.trial, "log_prob".into(), lp));
                    // the oracle only means something next to a density score
                    if let Some(o) = t.oracle_log_prob {
                        rows.push((model.clone(), t.trial, "oracle_log_prob".into(), o));
                    }
                }
                if let Some(lp) = t.continuous_log_prob {
                    rows.push((model.clone(), t.trial, "continuous_log_prob".into(), lp));
                }
                rows.push((model.clone(), t.trial, "rmse".into(), t.rmse));
            }
        }
        rows
    }
}

/// Execution knobs that do not affect results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Overrides the manifest's worker count when set.
    pub workers: Option<usize>,
    pub verbose: bool,
}

fn kind_stream(kind: ModelKind) -> u64 {
    match kind {
        ModelKind::Multiscale => 10,
        ModelKind::CdeTf => 11,
        ModelKind::Multinomial => 12,
        ModelKind::Mdn => 13,
        ModelKind::Point => 14,
    }
}

/// Run every (trial, model) job in the manifest and assemble the report.
pub fn run_experiment(
    manifest: &ExperimentManifest,
    options: RunOptions,
) -> Result<ExperimentReport> {
    manifest.validate()?;
    let started = Instant::now();

    // data that is shared across trials
    let csv_data = match &manifest.dataset {
        DatasetRef::Csv {
            path,
            feature_cols,
            target_cols,
            ..
        } => {
            let load =
                crate::data::load_csv(std::path::Path::new(path), feature_cols, target_cols)?;
            if load.skipped_rows > 0 && options.verbose {
                eprintln!("skipped {} rows with missing values", load.skipped_rows);
            }
            Some(load.dataset)
        }
        DatasetRef::Synthetic { .. } => None,
    };

    // per-trial splits, built up front so parallel jobs share them
    let mut trials = Vec::with_capacity(manifest.trials);
    for t in 0..manifest.trials {
        let trial_seed = derive_seed(derive_seed(manifest.seed, stream::TRIAL), t as u64);
        let split_seed = derive_seed(trial_seed, stream::SPLIT);
        let prepared = match &manifest.dataset {
            DatasetRef::Synthetic {
                classes,
                samples,
                bins,
                feature_noise,
            } => {
                let spec = SyntheticSpec::random(*classes, *bins, *feature_noise, trial_seed)?;
                let synth = generate(&spec, *samples)?;
                prepare_synthetic_trial(&synth, manifest.fractions, split_seed)?
            }
            DatasetRef::Csv {
                bins, standardize, ..
            } => prepare_csv_trial(
                csv_data.as_ref().expect("csv data loaded above"),
                bins,
                *standardize,
                manifest.fractions,
                split_seed,
            )?,
        };
        trials.push((trial_seed, prepared));
    }

    // independent jobs: one per (model, trial)
    let jobs: Vec<(usize, usize)> = (0..manifest.models.len())
        .flat_map(|m| (0..manifest.trials).map(move |t| (m, t)))
        .collect();
    let workers = options.workers.unwrap_or(manifest.workers).max(1);

    let run_job = |&(mi, ti): &(usize, usize)| -> Result<TrialMetrics> {
        let kind = manifest.models[mi];
        let (trial_seed, prepared) = &trials[ti];
        let model_seed = derive_seed(*trial_seed, kind_stream(kind));
        let base = manifest.train.to_config(kind, model_seed);
        let t0 = Instant::now();
        let outcome = grid_search(
            &manifest.search,
            &base,
            &prepared.train,
            &prepared.val_features,
            &prepared.val_labels,
        )?;
        let log_prob = test_log_prob(
            &outcome.model,
            &prepared.test_features,
            &prepared.test_labels,
        )?;
        let continuous_log_prob = mdn_continuous_log_prob(
            &outcome.model,
            &prepared.test_features,
            &prepared.test_targets,
        )?;
        let rmse = test_rmse(
            &outcome.model,
            &prepared.test_features,
            &prepared.test_targets,
        )?;
        let best = outcome.best().clone();
        if options.verbose {
            eprintln!(
                "{} trial {ti}: log_prob {:?} rmse {rmse:.4} (lambda={}, k={}, m={}) in {:.1?}",
                kind.name(),
                log_prob,
                best.lambda,
                best.k,
                best.m_components,
                t0.elapsed()
            );
        }
        Ok(TrialMetrics {
            trial: ti,
            seed: model_seed,
            log_prob,
            continuous_log_prob,
            oracle_log_prob: prepared.oracle_log_prob,
            rmse,
            selected_lambda: best.lambda,
            selected_k: best.k,
            selected_m: best.m_components,
            val_log_prob: best.val_log_prob,
            search: outcome.table,
        })
    };
    let results = run_jobs(&jobs, workers, run_job)?;

    // assemble per model, in manifest order
    let mut models = Vec::with_capacity(manifest.models.len());
    for (mi, &kind) in manifest.models.iter().enumerate() {
        let trials: Vec<TrialMetrics> = (0..manifest.trials)
            .map(|ti| results[mi * manifest.trials + ti].clone())
            .collect();
        let mean = |xs: Vec<f64>| -> Option<f64> {
            (xs.len() == manifest.trials).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
        };
        let mean_log_prob = mean(trials.iter().filter_map(|t| t.log_prob).collect());
        let mean_continuous_log_prob = mean(
            trials
                .iter()
                .filter_map(|t| t.continuous_log_prob)
                .collect(),
        );
        let mean_oracle_log_prob = mean(trials.iter().filter_map(|t| t.oracle_log_prob).collect());
        let mean_rmse = trials.iter().map(|t| t.rmse).sum::<f64>() / trials.len() as f64;
        let seeds = trials.iter().map(|t| t.seed).collect();
        models.push(ModelReport {
            model: kind,
            trials,
            mean_log_prob,
            mean_continuous_log_prob,
            mean_oracle_log_prob,
            mean_rmse,
            seeds,
            wall_clock_secs: None,
        });
    }
    if options.verbose {
        eprintln!("experiment finished in {:.1?}", started.elapsed());
    }
    Ok(ExperimentReport {
        manifest: manifest.clone(),
        models,
    })
}

/// Run `f` over the jobs with up to `workers` threads, keeping results in
/// job order. Job seeds are self-contained, so scheduling cannot change
/// any result.
fn run_jobs<J, R, F>(jobs: &[J], workers: usize, f: F) -> Result<Vec<R>>
where
    J: Sync,
    R: Send,
    F: Fn(&J) -> Result<R> + Sync,
{
    if workers <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<R>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let collected = results.into_inner().unwrap();
    let mut out = Vec::with_capacity(jobs.len());
    for r in collected {
        out.push(r.expect("worker filled every slot")?);
    }
    Ok(out)
}

/// One row of the sample-size sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub samples: usize,
    pub model: String,
    pub mean_log_prob: f64,
}

/// Rerun a synthetic manifest at several sample counts and tabulate mean
/// test log-probability per model, for externally plotted learning curves.
pub fn plot_data(
    manifest: &ExperimentManifest,
    sizes: &[usize],
    options: RunOptions,
) -> Result<Vec<PlotRow>> {
    let DatasetRef::Synthetic {
        classes,
        bins,
        feature_noise,
        ..
    } = manifest.dataset
    else {
        return Err(Error::Config(
            "sample-size sweeps need a synthetic dataset".into(),
        ));
    };
    if sizes.is_empty() {
        return Err(Error::Config("need at least one sample size".into()));
    }
    let mut rows = Vec::new();
    for &samples in sizes {
        let mut m = manifest.clone();
        m.dataset = DatasetRef::Synthetic {
            classes,
            samples,
            bins,
            feature_noise,
        };
        let report = run_experiment(&m, options)?;
        for model in &report.models {
            if let Some(lp) = model.mean_log_prob {
                rows.push(PlotRow {
                    samples,
                    model: model.model.name().to_string(),
                    mean_log_prob: lp,
                });
            }
        }
    }
    Ok(rows)
}

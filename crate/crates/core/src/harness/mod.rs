//! Experiment runner: builds tasks from configs, trains, and writes metrics files.

mod config;
mod metrics;
mod presets;

pub use config::{
    ExperimentConfig, IdxSource, LeastSquaresSpec, LogisticSpec, LowerBoundSpec, QuadraticSpec,
    TaskSpec, DEFAULT_WINDOW, OUT_DIR_ENV,
};
pub use metrics::{metrics_csv, write_run, CSV_HEADER};
pub use presets::{desk_logistic, desk_trainer, preset, GRID_AGGREGATORS, PRESET_NAMES};

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optimizer::{self, RunMetrics};
use crate::params::ParamVector;
use crate::rng::{Purpose, SeededRng};
use crate::tasks::{self, Dataset, LowerBoundPair, Task};

/// A task ready to train, plus the instance pair when the task is the lower-bound construction.
pub struct BuiltTask {
    pub task: Box<dyn Task>,
    pub pair: Option<LowerBoundPair>,
}

fn load_split(images: &Path, labels: &Path) -> Result<Dataset> {
    tasks::ingest_idx(images, labels)
}

fn logistic_data(spec: &LogisticSpec, rng: &SeededRng) -> Result<(Dataset, Dataset)> {
    let (train, test) = match &spec.idx {
        Some(src) => {
            let train = load_split(&src.train_images, &src.train_labels)?;
            let test = match (&src.test_images, &src.test_labels) {
                (Some(i), Some(l)) => load_split(i, l)?,
                (None, None) => train.clone(),
                _ => {
                    return Err(Error::Config(
                        "idx test split needs both test_images and test_labels".into(),
                    ))
                }
            };
            (train, test)
        }
        None => {
            let train = tasks::synthetic_classification(
                &spec.synthetic,
                &mut rng.stream(Purpose::Data, 0, 0),
                &mut rng.stream(Purpose::Data, 1, 0),
            )?;
            let test_spec = tasks::SyntheticSpec {
                per_class: spec.test_per_class,
                ..spec.synthetic.clone()
            };
            let test = tasks::synthetic_classification(
                &test_spec,
                &mut rng.stream(Purpose::Data, 0, 0),
                &mut rng.stream(Purpose::Data, 2, 0),
            )?;
            (train, test)
        }
    };
    if spec.long_tail_gamma < 1.0 {
        let train = tasks::long_tail_subsample(
            &train,
            spec.long_tail_gamma,
            &mut rng.stream(Purpose::Data, 3, 0),
        )?;
        let test = tasks::long_tail_subsample(
            &test,
            spec.long_tail_gamma,
            &mut rng.stream(Purpose::Data, 4, 0),
        )?;
        return Ok((train, test));
    }
    Ok((train, test))
}

/// Builds the task for `good_workers` honest workers. Data and instance draws
/// come from streams of `seed`.
pub fn build_task(spec: &TaskSpec, good_workers: usize, seed: u64) -> Result<BuiltTask> {
    let rng = SeededRng::new(seed);
    let task: Box<dyn Task> = match spec {
        TaskSpec::Quadratic(q) => Box::new(
            tasks::QuadraticTask::random(
                good_workers,
                q.dim,
                q.zeta_sq,
                q.noise,
                &mut rng.stream(Purpose::Init, 0, 0),
            )?
            .with_random_start(q.init_distance, &mut rng.stream(Purpose::Init, 1, 0))?,
        ),
        TaskSpec::LeastSquares(l) => Box::new(tasks::make_consistent_least_squares(
            good_workers,
            l.dim,
            l.samples_per_worker,
            l.noise,
            l.batch,
            &mut rng.stream(Purpose::Init, 0, 0),
        )?),
        TaskSpec::Logistic(l) => {
            let (train, test) = logistic_data(l, &rng)?;
            let shards = tasks::partition_heterogeneous(
                &train,
                good_workers,
                &mut rng.stream(Purpose::Partition, 0, 0),
            )?;
            let batch = if l.batch == 0 { None } else { Some(l.batch) };
            Box::new(tasks::make_logistic_task(shards, l.l2, batch, Some(test))?)
        }
        TaskSpec::LowerBound(b) => {
            let pair = tasks::make_lower_bound_pair(b.mu, b.zeta, b.delta, good_workers)?;
            let task = pair.worker_functions()?;
            return Ok(BuiltTask {
                task: Box::new(task),
                pair: Some(pair),
            });
        }
    };
    Ok(BuiltTask { task, pair: None })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub name: String,
    pub seed: u64,
    pub steps_completed: usize,
    /// Step at which the run was aborted, if it diverged.
    pub diverged_at: Option<usize>,
    pub final_loss: Option<f64>,
    pub final_grad_norm_sq: Option<f64>,
    pub final_agg_error: Option<f64>,
    /// Mean accuracy over the last `window` steps.
    pub mean_accuracy: Option<f64>,
    pub window: usize,
    pub b_hat_sq: f64,
    /// Worst suboptimality over the two lower-bound instances.
    pub lower_bound_gap: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub metrics: RunMetrics,
    pub summary: RunSummary,
    pub final_x: Option<ParamVector>,
}

/// The config as run for a single seed.
pub fn config_for_seed(config: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut c = config.clone();
    c.seeds = vec![seed];
    c.trainer.seed = seed;
    c
}

/// Short hex digest of the config text, stable across machines.
pub fn run_id(config: &ExperimentConfig) -> Result<String> {
    let digest = Sha256::digest(config.to_toml()?.as_bytes());
    Ok(hex::encode(digest)[..12].to_string())
}

/// Trains one seed of `config` without touching the filesystem.
pub fn run_single(config: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let config = config_for_seed(config, seed);
    let good = config
        .trainer
        .workers
        .saturating_sub(config.trainer.byzantine);
    let built = build_task(&config.task, good, seed)?;
    let (metrics, final_x, diverged_at) =
        match optimizer::train_with_iterate(&config.trainer, built.task.as_ref()) {
            Ok((m, x)) => (m, Some(x), None),
            Err(Error::Divergence { step, partial }) => (*partial, None, Some(step)),
            Err(e) => return Err(e),
        };
    let last = metrics.last();
    let summary = RunSummary {
        run_id: run_id(&config)?,
        name: config.name.clone(),
        seed,
        steps_completed: metrics.records.len(),
        diverged_at,
        final_loss: last.map(|r| r.loss),
        final_grad_norm_sq: last.map(|r| r.grad_norm_sq),
        final_agg_error: last.map(|r| r.agg_error),
        mean_accuracy: metrics.final_accuracy(config.window),
        window: config.window,
        b_hat_sq: metrics.b_hat_sq(),
        lower_bound_gap: match (&built.pair, &final_x) {
            (Some(pair), Some(x)) => Some(optimizer::lower_bound_gap(x.as_slice()[0], pair)),
            _ => None,
        },
    };
    Ok(RunOutcome {
        config,
        metrics,
        summary,
        final_x,
    })
}

/// Output directory: explicit choice, else the config's, else `$BYZSIM_OUT`, else `runs`.
pub fn resolve_out_dir(explicit: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| config.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Runs every seed of `config` (in parallel) and writes one CSV and one JSON
/// file per seed into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RunOutcome>> {
    std::fs::create_dir_all(out_dir)?;
    let outcomes: Vec<RunOutcome> = config
        .seeds
        .par_iter()
        .map(|&seed| run_single(config, seed))
        .collect::<Result<_>>()?;
    for o in &outcomes {
        write_run(out_dir, o)?;
    }
    Ok(outcomes)
}

/// Runs a whole preset; cells run in parallel, files are written per run.
pub fn run_preset(name: &str, out_dir: &Path, seeds: Option<&[u64]>) -> Result<Vec<RunOutcome>> {
    let mut cells = preset(name)?;
    if let Some(s) = seeds {
        for c in &mut cells {
            c.seeds = s.to_vec();
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let runs: Vec<(ExperimentConfig, u64)> = cells
        .iter()
        .flat_map(|c| c.seeds.iter().map(move |&s| (c.clone(), s)))
        .collect();
    let outcomes: Vec<RunOutcome> = runs
        .par_iter()
        .map(|(c, s)| run_single(c, *s))
        .collect::<Result<_>>()?;
    for o in &outcomes {
        write_run(out_dir, o)?;
    }
    Ok(outcomes)
}

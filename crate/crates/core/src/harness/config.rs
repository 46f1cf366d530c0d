//! Experiment configuration: TOML on disk, dotted-path overrides from the CLI.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::TrainerConfig;
use crate::tasks::SyntheticSpec;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BYZSIM_OUT";

pub const DEFAULT_WINDOW: usize = 150;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "one")]
    pub zeta_sq: f64,
    #[serde(default)]
    pub noise: f64,
    /// Distance of the starting point from the optimum.
    #[serde(default = "one")]
    pub init_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeastSquaresSpec {
    pub dim: usize,
    #[serde(default = "two")]
    pub samples_per_worker: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "one_usize")]
    pub batch: usize,
}

/// Paths of an IDX train split and an optional IDX test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticSpec {
    /// Synthetic clusters, used when `idx` is absent.
    #[serde(default)]
    pub synthetic: SyntheticSpec,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    pub idx: Option<IdxSource>,
    #[serde(default = "default_l2")]
    pub l2: f64,
    /// Per-worker minibatch size; 0 uses the whole shard.
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Class `i` keeps a `γ^i` fraction of its samples.
    #[serde(default = "one")]
    pub long_tail_gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundSpec {
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default = "one")]
    pub zeta: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Quadratic(QuadraticSpec),
    LeastSquares(LeastSquaresSpec),
    Logistic(LogisticSpec),
    LowerBound(LowerBoundSpec),
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec::Quadratic(QuadraticSpec {
            dim: default_dim(),
            zeta_sq: 1.0,
            noise: 0.0,
            init_distance: 1.0,
        })
    }
}

fn default_dim() -> usize {
    10
}
fn one() -> f64 {
    1.0
}
fn two() -> usize {
    2
}
fn one_usize() -> usize {
    1
}
fn default_l2() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    32
}
fn default_test_per_class() -> usize {
    50
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// One run per seed; each overrides `trainer.seed`.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Steps averaged for the final-accuracy summary.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Output directory; falls back to the CLI flag, then `BYZSIM_OUT`, then `runs`.
    pub out_dir: Option<PathBuf>,
    /// Free-form record of how the setup was scaled down, if it was.
    pub scale_note: Option<String>,
    #[serde(default)]
    pub task: TaskSpec,
    #[serde(default)]
    pub trainer: TrainerConfig,
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, task: TaskSpec, trainer: TrainerConfig) -> Self {
        Self {
            name: name.into(),
            seeds: default_seeds(),
            window: DEFAULT_WINDOW,
            out_dir: None,
            scale_note: None,
            task,
            trainer,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies `key=value` overrides. Keys are dotted paths into the config;
    /// paths that do not start at the top level are looked up under `trainer`
    /// and then `task`. Assigning a bare value to a table sets its `kind`, so
    /// `attack=ipm` selects the attack. Values are parsed as TOML literals and
    /// fall back to strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
            let path: Vec<&str> = key.trim().split('.').collect();
            let value = parse_literal(raw.trim());
            set_path(&mut root, &path, value)?;
        }
        let text = toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml(&text)
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Probe {
        v: toml::Value,
    }
    toml::from_str::<Probe>(&format!("v = {raw}"))
        .map(|p| p.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

fn resolve<'a>(root: &toml::Value, path: &[&'a str]) -> Vec<&'a str> {
    let top = root.as_table().expect("config serializes to a table");
    if top.contains_key(path[0])
        || ["name", "seeds", "window", "out_dir", "scale_note"].contains(&path[0])
    {
        return path.to_vec();
    }
    for parent in ["trainer", "task"] {
        if top
            .get(parent)
            .and_then(toml::Value::as_table)
            .is_some_and(|t| {
                t.contains_key(path[0]) || parent == "trainer" && is_trainer_key(path[0])
            })
        {
            let mut full = vec![parent];
            full.extend_from_slice(path);
            return full;
        }
    }
    path.to_vec()
}

fn is_trainer_key(k: &str) -> bool {
    let d = toml::Value::try_from(TrainerConfig::default()).expect("default trainer serializes");
    d.as_table().is_some_and(|t| t.contains_key(k))
}

fn set_path(root: &mut toml::Value, path: &[&str], value: toml::Value) -> Result<()> {
    let full = resolve(root, path);
    let mut cur = root;
    for (i, seg) in full.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{}' is not a table", full[..i].join("."))))?;
        if i + 1 == full.len() {
            match table.get_mut(*seg) {
                Some(toml::Value::Table(t)) if !value.is_table() => {
                    t.insert("kind".into(), value);
                }
                _ => {
                    table.insert((*seg).to_string(), value);
                }
            }
            return Ok(());
        }
        cur = table
            .entry((*seg).to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Ok(())
}

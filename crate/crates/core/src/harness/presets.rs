//! Named experiment sets at desk scale.

use crate::aggregators::{AggregatorConfig, AggregatorKind};
use crate::attacks::{AttackConfig, AttackKind};
use crate::error::{Error, Result};
use crate::optimizer::TrainerConfig;

use super::config::{ExperimentConfig, LeastSquaresSpec, LogisticSpec, LowerBoundSpec, TaskSpec};
use crate::tasks::SyntheticSpec;

pub const PRESET_NAMES: [&str; 7] = [
    "imbalance-no-attack",
    "mimic-vs-median",
    "bucketing-fix",
    "attack-grid",
    "s-sweep",
    "lowerbound",
    "overparam",
];

/// Robust aggregators compared in the grid experiments.
pub const GRID_AGGREGATORS: [AggregatorKind; 4] = [
    AggregatorKind::Krum,
    AggregatorKind::Cm,
    AggregatorKind::Rfa,
    AggregatorKind::Cclip,
];

pub const DESK_STEPS: usize = 300;
pub const DESK_STEP_SIZE: f64 = 0.1;

/// Label-sorted synthetic 10-class logistic regression.
pub fn desk_logistic(long_tail_gamma: f64) -> TaskSpec {
    TaskSpec::Logistic(LogisticSpec {
        synthetic: SyntheticSpec {
            num_classes: 10,
            per_class: 200,
            feature_dim: 20,
            separation: 1.0,
        },
        test_per_class: 50,
        idx: None,
        l2: 1e-3,
        batch: 32,
        long_tail_gamma,
    })
}

pub fn desk_trainer(
    aggregator: AggregatorKind,
    bucketing_s: usize,
    attack: AttackKind,
    momentum: f64,
    workers: usize,
    byzantine: usize,
) -> TrainerConfig {
    TrainerConfig {
        steps: DESK_STEPS,
        step_size: DESK_STEP_SIZE,
        momentum,
        aggregator: AggregatorConfig::new(aggregator, byzantine),
        bucketing_s,
        attack: AttackConfig::new(attack),
        workers,
        byzantine,
        ..TrainerConfig::default()
    }
}

fn cell(prefix: &str, task: TaskSpec, trainer: TrainerConfig, note: &str) -> ExperimentConfig {
    let name = format!(
        "{prefix}-{}-s{}-{}-b{}",
        trainer.aggregator.kind.name(),
        trainer.bucketing_s,
        trainer.attack.kind.name(),
        (trainer.momentum * 100.0).round() as u32
    );
    let mut c = ExperimentConfig::new(name, task, trainer);
    c.seeds = vec![0, 1, 2];
    c.scale_note = Some(note.to_string());
    c
}

const CLASSIFIER_NOTE: &str =
    "original: MNIST MLP, 600-4500 steps; scaled: synthetic 10-class logistic regression, 300 steps";

pub fn preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    let out = match name {
        "imbalance-no-attack" => {
            let mut v = Vec::new();
            for gamma in [1.0, 0.8, 0.5] {
                for kind in AggregatorKind::ALL {
                    let mut c = cell(
                        &format!("imbalance-g{}", (gamma * 100.0) as u32),
                        desk_logistic(gamma),
                        desk_trainer(kind, 1, AttackKind::None, 0.0, 20, 0),
                        CLASSIFIER_NOTE,
                    );
                    c.trainer.aggregator.q = 4;
                    v.push(c);
                }
            }
            v
        }
        "mimic-vs-median" => {
            let mut v = Vec::new();
            for kind in AggregatorKind::ALL {
                for s in [1, 2] {
                    v.push(cell(
                        "mimic",
                        desk_logistic(1.0),
                        desk_trainer(kind, s, AttackKind::Mimic, 0.0, 25, 5),
                        CLASSIFIER_NOTE,
                    ));
                }
            }
            v
        }
        "bucketing-fix" => {
            let mut v = Vec::new();
            for kind in AggregatorKind::ALL {
                for s in [1, 2] {
                    let mut c = cell(
                        "bucketing",
                        desk_logistic(1.0),
                        desk_trainer(kind, s, AttackKind::None, 0.0, 20, 0),
                        CLASSIFIER_NOTE,
                    );
                    c.trainer.aggregator.q = 4;
                    v.push(c);
                }
            }
            v
        }
        "attack-grid" => {
            let mut v = Vec::new();
            for kind in GRID_AGGREGATORS {
                for s in [1, 2] {
                    for attack in AttackKind::ACTIVE {
                        for beta in [0.0, 0.9] {
                            v.push(cell(
                                "grid",
                                desk_logistic(1.0),
                                desk_trainer(kind, s, attack, beta, 25, 5),
                                CLASSIFIER_NOTE,
                            ));
                        }
                    }
                }
            }
            v
        }
        "s-sweep" => {
            let mut v = Vec::new();
            for kind in [AggregatorKind::Cm, AggregatorKind::Rfa] {
                for s in 1..=5 {
                    v.push(cell(
                        "ssweep",
                        desk_logistic(1.0),
                        desk_trainer(kind, s, AttackKind::Ipm, 0.0, 24, 5),
                        "original: 53 workers with 5 attackers; scaled: 24 workers with 5 attackers, 300 steps",
                    ));
                }
            }
            v
        }
        "lowerbound" => {
            let mut v = Vec::new();
            for kind in AggregatorKind::ALL {
                for s in [1, 2] {
                    let mut t = desk_trainer(kind, s, AttackKind::None, 0.0, 10, 0);
                    t.aggregator.q = 2;
                    t.steps = 200;
                    t.step_size = 0.5;
                    let mut c = cell(
                        "lowerbound",
                        TaskSpec::LowerBound(LowerBoundSpec {
                            mu: 1.0,
                            zeta: 1.0,
                            delta: 0.2,
                        }),
                        t,
                        "two indistinguishable one-dimensional instances, 10 workers",
                    );
                    c.seeds = vec![0];
                    v.push(c);
                }
            }
            v
        }
        "overparam" => {
            let mut v = Vec::new();
            for dim in [40, 80, 160, 320] {
                let mut t = desk_trainer(AggregatorKind::Cclip, 2, AttackKind::Ipm, 0.9, 25, 5);
                t.step_size = 0.5;
                t.steps = 500;
                let mut c = cell(
                    &format!("overparam-d{dim}"),
                    TaskSpec::LeastSquares(LeastSquaresSpec {
                        dim,
                        samples_per_worker: 2,
                        noise: 0.0,
                        batch: 1,
                    }),
                    t,
                    "original: neural networks of growing width; scaled: consistent least squares of growing dimension",
                );
                c.seeds = vec![0];
                v.push(c);
            }
            v
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}'; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(out)
}

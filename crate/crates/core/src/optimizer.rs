//! Simulated server/worker training loop with worker momentum and robust aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregators::{self, AggregatorConfig, AggregatorKind};
use crate::attacks::{self, AttackConfig, AttackKind, MimicAttacker, MimicState};
use crate::bucketing;
use crate::error::{Error, Result};
use crate::params::{CohortSpec, ParamVector};
use crate::rng::{Purpose, SeededRng};
use crate::tasks::{LowerBoundPair, Task};

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e12;

/// Ratios are reported as infinite below this squared gradient norm.
pub const FLAT_GRADIENT: f64 = 1e-12;

/// Worker spread below which a flat step counts as a shared optimum.
pub const FLAT_SPREAD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumForm {
    /// `m ← (1 − β) g + β m`
    #[default]
    ConvexCombination,
    /// `m ← β m + g`
    Accumulation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub steps: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub momentum_form: MomentumForm,
    pub aggregator: AggregatorConfig,
    pub bucketing_s: usize,
    pub attack: AttackConfig,
    /// Total workers, good and Byzantine.
    pub workers: usize,
    /// Byzantine workers; they occupy the last indices.
    pub byzantine: usize,
    pub seed: u64,
    /// Fraction of initial steps ignored when taking the maximum heterogeneity ratio.
    pub ratio_warmup: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            step_size: 0.01,
            momentum: 0.0,
            momentum_form: MomentumForm::ConvexCombination,
            aggregator: AggregatorConfig::default(),
            bucketing_s: 1,
            attack: AttackConfig::default(),
            workers: 25,
            byzantine: 0,
            seed: 0,
            ratio_warmup: 0.1,
        }
    }
}

impl TrainerConfig {
    pub fn cohort(&self) -> Result<CohortSpec> {
        CohortSpec::new(self.workers, self.byzantine)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidParameter("step_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(
                "momentum must lie in [0, 1)".into(),
            ));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be >= 1".into()));
        }
        if self.bucketing_s == 0 || self.bucketing_s > self.workers {
            return Err(Error::InvalidBucketSize {
                n: self.workers,
                s: self.bucketing_s,
            });
        }
        if !(0.0..1.0).contains(&self.ratio_warmup) {
            return Err(Error::InvalidParameter(
                "ratio_warmup must lie in [0, 1)".into(),
            ));
        }
        self.aggregator.validate()?;
        self.attack.validate()?;
        let cohort = self.cohort()?;
        if cohort.q() > 0 && self.attack.kind == AttackKind::None {
            return Err(Error::InconsistentCohort(format!(
                "{} Byzantine workers but no attack",
                cohort.q()
            )));
        }
        Ok(())
    }
}

/// One row of per-step telemetry, measured at the iterate after the update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub agg_error: f64,
    pub accuracy: Option<f64>,
    pub zeta_hat_sq: f64,
    /// `ζ̂² / ‖∇f‖²`; infinite when the gradient vanishes.
    pub b_hat_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub records: Vec<StepRecord>,
    pub ratio_warmup: f64,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    /// Maximum heterogeneity ratio after the warmup steps.
    ///
    /// Steps flagged flat where the workers also agree (both gradient and
    /// spread negligible) are a reached common optimum, where the ratio is
    /// 0/0; they are skipped. A flat gradient with real spread still counts as ∞.
    pub fn b_hat_sq(&self) -> f64 {
        let skip = (self.records.len() as f64 * self.ratio_warmup).floor() as usize;
        self.records
            .iter()
            .skip(skip)
            .filter(|r| !(r.b_hat_ratio.is_infinite() && r.zeta_hat_sq < FLAT_SPREAD))
            .map(|r| r.b_hat_ratio)
            .fold(0.0, f64::max)
    }

    /// Mean accuracy over the last `window` steps, if the task reports accuracy.
    pub fn final_accuracy(&self, window: usize) -> Option<f64> {
        let start = self.records.len().saturating_sub(window.max(1));
        let tail: Vec<f64> = self.records[start..]
            .iter()
            .filter_map(|r| r.accuracy)
            .collect();
        if tail.is_empty() {
            None
        } else {
            Some(tail.iter().sum::<f64>() / tail.len() as f64)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub full_gradient: ParamVector,
    pub grad_norm_sq: f64,
    pub zeta_hat_sq: f64,
    pub ratio: f64,
}

/// Spread of worker gradients around the full gradient at `x`.
pub fn heterogeneity_diagnostics(task: &dyn Task, x: &ParamVector) -> Diagnostics {
    let grads: Vec<ParamVector> = (0..task.num_workers())
        .into_par_iter()
        .map(|j| task.worker_full_gradient(j, x))
        .collect();
    diagnostics_from(&grads, x.dim())
}

fn diagnostics_from(grads: &[ParamVector], dim: usize) -> Diagnostics {
    let mut full = ParamVector::zeros(dim);
    for g in grads {
        full.axpy(1.0, g);
    }
    let full = full.scale(1.0 / grads.len() as f64);
    let zeta_hat_sq = grads.iter().map(|g| g.dist_sq(&full)).sum::<f64>() / grads.len() as f64;
    let grad_norm_sq = full.norm_sq();
    let ratio = if grad_norm_sq < FLAT_GRADIENT {
        f64::INFINITY
    } else {
        zeta_hat_sq / grad_norm_sq
    };
    Diagnostics {
        full_gradient: full,
        grad_norm_sq,
        zeta_hat_sq,
        ratio,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    pub step_size: f64,
    pub momentum: f64,
}

/// Step size and momentum that balance the convergence terms for smoothness
/// `L`, initial gap `F0`, aggregator constant `c`, Byzantine fraction `δ`,
/// noise `σ`, heterogeneity `ζ`, `n` workers and `T` steps.
///
/// Without noise the step size hits its cap `1/(8L)` and momentum is zero.
#[allow(clippy::too_many_arguments)]
pub fn tuned_hyperparams(
    smoothness: f64,
    initial_gap: f64,
    c: f64,
    delta: f64,
    sigma: f64,
    zeta: f64,
    n: usize,
    steps: usize,
) -> Result<Hyperparams> {
    if !(smoothness > 0.0)
        || !(initial_gap >= 0.0)
        || !(c >= 0.0)
        || !(delta >= 0.0)
        || n == 0
        || steps == 0
    {
        return Err(Error::InvalidParameter(
            "tuned_hyperparams needs L > 0, F0 >= 0, c >= 0, delta >= 0, n >= 1, T >= 1".into(),
        ));
    }
    let cap = 1.0 / (8.0 * smoothness);
    let step_size = if sigma == 0.0 {
        cap
    } else {
        let sig2 = sigma * sigma;
        let num = 4.0 * initial_gap + 15.0 * c * delta * (zeta * zeta + 2.0 * sig2) / smoothness;
        let den = steps as f64 * 160.0 * smoothness * sig2 * (1.0 / n as f64 + 6.0 * c * delta);
        (num / den).sqrt().min(cap)
    };
    Ok(Hyperparams {
        step_size,
        momentum: (1.0 - 8.0 * smoothness * step_size).max(0.0),
    })
}

/// Worst suboptimality of `x` across the two indistinguishable instances.
pub fn lower_bound_gap(x: f64, pair: &LowerBoundPair) -> f64 {
    pair.suboptimality(1, x).max(pair.suboptimality(2, x))
}

/// One momentum update; `first` means the buffer is initialised with `g`.
pub fn update_momentum(
    m: &mut ParamVector,
    g: &ParamVector,
    beta: f64,
    form: MomentumForm,
    first: bool,
) {
    if first {
        *m = g.clone();
        return;
    }
    let (keep, add) = match form {
        MomentumForm::ConvexCombination => (beta, 1.0 - beta),
        MomentumForm::Accumulation => (beta, 1.0),
    };
    for (mi, gi) in m.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *mi = keep * *mi + add * gi;
    }
}

enum Adversary {
    Silent,
    Stateless,
    Mimic(Box<MimicAttacker>),
    LabelFlip(Vec<ParamVector>),
}

/// Stepwise trainer; [`train`] runs it to completion.
pub struct Trainer<'a> {
    config: TrainerConfig,
    aggregator: AggregatorConfig,
    task: &'a dyn Task,
    rng: SeededRng,
    x: ParamVector,
    momenta: Vec<ParamVector>,
    adversary: Adversary,
    center: ParamVector,
    step: usize,
    metrics: RunMetrics,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &TrainerConfig, task: &'a dyn Task) -> Result<Self> {
        config.validate()?;
        let cohort = config.cohort()?;
        let good = cohort.n() - cohort.q();
        if task.num_workers() != good {
            return Err(Error::InconsistentCohort(format!(
                "task has {} workers, cohort has {good} good workers",
                task.num_workers()
            )));
        }
        let x = task.initial_point();
        if x.dim() != task.dim() {
            return Err(Error::DimensionMismatch {
                expected: task.dim(),
                got: x.dim(),
            });
        }
        let rng = SeededRng::new(config.seed);
        let adversary = match config.attack.kind {
            _ if cohort.q() == 0 => Adversary::Silent,
            AttackKind::None => Adversary::Silent,
            AttackKind::Mimic => {
                let state = MimicState::random(task.dim(), &mut rng.stream(Purpose::Attack, 0, 0))?;
                Adversary::Mimic(Box::new(MimicAttacker::new(
                    state,
                    config.attack.init_phase_steps,
                    config.attack.mimic_retarget,
                )))
            }
            AttackKind::LabelFlip => {
                if task
                    .flipped_label_gradient(&x, &mut rng.stream(Purpose::Attack, 0, 0))
                    .is_none()
                {
                    return Err(Error::Unsupported("label flipping"));
                }
                Adversary::LabelFlip(vec![ParamVector::zeros(task.dim()); cohort.q()])
            }
            AttackKind::BitFlip | AttackKind::Ipm | AttackKind::Alie => Adversary::Stateless,
        };
        let mut aggregator = config.aggregator.clone();
        if aggregator.kind == AggregatorKind::Cclip && aggregator.clip_radius.is_none() {
            aggregator.clip_radius = Some(aggregator.clip_radius_for(config.momentum));
        }
        Ok(Self {
            config: config.clone(),
            aggregator,
            task,
            rng,
            center: ParamVector::zeros(x.dim()),
            momenta: vec![ParamVector::zeros(x.dim()); good],
            x,
            adversary,
            step: 0,
            metrics: RunMetrics {
                records: Vec::with_capacity(config.steps),
                ratio_warmup: config.ratio_warmup,
            },
        })
    }

    pub fn x(&self) -> &ParamVector {
        &self.x
    }

    pub fn momenta(&self) -> &[ParamVector] {
        &self.momenta
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn into_metrics(self) -> RunMetrics {
        self.metrics
    }

    fn diverged(&self, step: usize) -> Error {
        Error::Divergence {
            step,
            partial: Box::new(self.metrics.clone()),
        }
    }

    fn byzantine_messages(&mut self, t: usize, first: bool) -> Result<Vec<ParamVector>> {
        let q = self.config.byzantine;
        let n = self.config.workers;
        let good = &self.momenta;
        match &mut self.adversary {
            Adversary::Silent => Ok(Vec::new()),
            Adversary::Mimic(m) => m.step(good, q),
            Adversary::LabelFlip(buffers) => {
                let offset = good.len();
                let grads: Vec<ParamVector> = (0..q)
                    .into_par_iter()
                    .map(|b| {
                        let mut r = self
                            .rng
                            .stream(Purpose::Attack, (offset + b) as u64, t as u64);
                        self.task
                            .flipped_label_gradient(&self.x, &mut r)
                            .ok_or(Error::Unsupported("label flipping"))
                    })
                    .collect::<Result<_>>()?;
                for (m, g) in buffers.iter_mut().zip(&grads) {
                    update_momentum(m, g, self.config.momentum, self.config.momentum_form, first);
                }
                Ok(buffers.clone())
            }
            Adversary::Stateless => match self.config.attack.kind {
                AttackKind::BitFlip => attacks::attack_bit_flip(good, q),
                AttackKind::Ipm => attacks::attack_ipm(good, self.config.attack.epsilon, q),
                AttackKind::Alie => attacks::attack_alie(good, n, q, self.config.attack.z_override),
                _ => unreachable!("stateful attacks have their own adversary"),
            },
        }
    }

    /// Runs one round and returns its telemetry.
    pub fn step(&mut self) -> Result<StepRecord> {
        self.step += 1;
        let t = self.step;
        let first = t == 1;

        let grads: Vec<ParamVector> = (0..self.momenta.len())
            .into_par_iter()
            .map(|i| {
                let mut r = self.rng.stream(Purpose::Gradient, i as u64, t as u64);
                self.task.worker_stoch_gradient(i, &self.x, &mut r)
            })
            .collect();
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(self.diverged(t));
        }
        for (m, g) in self.momenta.iter_mut().zip(&grads) {
            update_momentum(m, g, self.config.momentum, self.config.momentum_form, first);
        }

        let byz = self.byzantine_messages(t, first)?;
        let mut msgs = self.momenta.clone();
        msgs.extend(byz);
        let good: Vec<usize> = (0..self.momenta.len()).collect();

        let mut bucket_rng = self.rng.stream(Purpose::Bucketing, 0, t as u64);
        let aggregate = match bucketing::robust_aggregate(
            &msgs,
            self.config.bucketing_s,
            &self.aggregator,
            &mut bucket_rng,
            Some(&self.center),
        ) {
            Ok(a) => a,
            Err(Error::NonFinite(_)) => return Err(self.diverged(t)),
            Err(e) => return Err(e),
        };
        let agg_error = aggregators::aggregation_error(&aggregate, &msgs, &good)?;
        self.x.axpy(-self.config.step_size, &aggregate);
        self.center = aggregate;

        let loss = self.task.loss(&self.x);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS || !self.x.is_finite() {
            return Err(self.diverged(t));
        }
        let diag = heterogeneity_diagnostics(self.task, &self.x);
        let record = StepRecord {
            step: t,
            loss,
            grad_norm_sq: diag.grad_norm_sq,
            agg_error,
            accuracy: self.task.accuracy(&self.x),
            zeta_hat_sq: diag.zeta_hat_sq,
            b_hat_ratio: diag.ratio,
        };
        self.metrics.records.push(record.clone());
        Ok(record)
    }
}

/// Runs `config.steps` rounds of robust distributed momentum SGD on `task`.
pub fn train(config: &TrainerConfig, task: &dyn Task) -> Result<RunMetrics> {
    Ok(train_with_iterate(config, task)?.0)
}

/// Like [`train`], also returning the final iterate.
pub fn train_with_iterate(
    config: &TrainerConfig,
    task: &dyn Task,
) -> Result<(RunMetrics, ParamVector)> {
    let mut trainer = Trainer::new(config, task)?;
    for _ in 0..config.steps {
        trainer.step()?;
    }
    let x = trainer.x.clone();
    Ok((trainer.into_metrics(), x))
}

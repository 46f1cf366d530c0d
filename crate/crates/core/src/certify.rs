//! Statistical check of an aggregator's `(δ_max, c)` robustness guarantee.
//!
//! Good inputs are i.i.d. `N(0, ρ²/(2d) I)`, so their expected pairwise squared
//! distance is `ρ²`. Byzantine inputs all sit at the good sample mean plus
//! `ρ e₁`. The mean aggregation error over many seeds must stay below `c δ ρ²`
//! with a slack factor.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregators::{self, AggregatorConfig, AggregatorKind, RobustnessCert};
use crate::bucketing::{self, DEFAULT_S_CAP};
use crate::error::{Error, Result};
use crate::params::{self, ParamVector};
use crate::rng::{Purpose, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyConfig {
    pub aggregator: AggregatorKind,
    /// Bucket size; `None` picks `⌊δ_max/δ⌋` (1 for centered clipping).
    pub bucket_size: Option<usize>,
    pub delta: f64,
    pub workers: usize,
    pub dim: usize,
    pub rho: f64,
    pub trials: usize,
    /// Required headroom: passes when `mean_error · (1 + slack) ≤ c δ ρ²`.
    pub slack: f64,
    pub seed: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            aggregator: AggregatorKind::Rfa,
            bucket_size: None,
            delta: 0.1,
            workers: 20,
            dim: 10,
            rho: 1.0,
            trials: 1000,
            slack: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub aggregator: AggregatorKind,
    pub bucket_size: usize,
    pub workers: usize,
    pub byzantine: usize,
    pub delta: f64,
    pub delta_max: f64,
    pub c: f64,
    pub margin: Option<f64>,
    pub bound: f64,
    pub mean_error: f64,
    pub std_error: f64,
    pub trials: usize,
    pub passed: bool,
}

pub fn certify_aggregator(cfg: &CertifyConfig) -> Result<CertifyReport> {
    let cert = RobustnessCert::tightest(cfg.aggregator, cfg.dim).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "{} carries no robustness constants",
            cfg.aggregator.name()
        ))
    })?;
    if !(cfg.delta > 0.0 && cfg.delta < 0.5) || cfg.dim == 0 || !(cfg.rho > 0.0) || cfg.trials == 0
    {
        return Err(Error::InvalidParameter(
            "certification needs 0 < delta < 1/2, dim >= 1, rho > 0, trials >= 1".into(),
        ));
    }
    let q = (cfg.delta * cfg.workers as f64).round() as usize;
    if q == 0 || 2 * q >= cfg.workers {
        return Err(Error::InvalidParameter(format!(
            "delta {} gives {q} Byzantine of {} workers",
            cfg.delta, cfg.workers
        )));
    }
    let s = cfg.bucket_size.unwrap_or(match cfg.aggregator {
        AggregatorKind::Cclip => 1,
        _ => bucketing::choose_s(cfg.delta, cert.delta_max, DEFAULT_S_CAP),
    });
    let good = cfg.workers - q;
    let good_idx: Vec<usize> = (0..good).collect();
    let sd = cfg.rho / (2.0 * cfg.dim as f64).sqrt();
    let mut base = AggregatorConfig::new(cfg.aggregator, q);
    if cfg.aggregator == AggregatorKind::Cclip {
        base.clip_radius = Some(cfg.rho);
    }
    let rng = SeededRng::new(cfg.seed);

    let mut errors = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let mut data = rng.stream(Purpose::Certify, 0, trial as u64);
        let mut msgs: Vec<ParamVector> = (0..good)
            .map(|_| {
                ParamVector::from_untrusted(
                    (0..cfg.dim)
                        .map(|_| {
                            let e: f64 = StandardNormal.sample(&mut data);
                            sd * e
                        })
                        .collect(),
                )
            })
            .collect();
        let mut spike = params::mean(&msgs)?;
        spike.as_mut_slice()[0] += cfg.rho;
        msgs.extend(std::iter::repeat_n(spike, q));
        // clipping is centred on a robust first guess
        let center = if cfg.aggregator == AggregatorKind::Cclip {
            Some(aggregators::aggregate_cm(&msgs)?)
        } else {
            None
        };
        let mut plan_rng = rng.stream(Purpose::Bucketing, 0, trial as u64);
        let out = bucketing::robust_aggregate(&msgs, s, &base, &mut plan_rng, center.as_ref())?;
        errors.push(aggregators::aggregation_error(&out, &msgs, &good_idx)?);
    }
    let t = errors.len() as f64;
    let mean_error = errors.iter().sum::<f64>() / t;
    let var = errors.iter().map(|e| (e - mean_error).powi(2)).sum::<f64>() / (t - 1.0).max(1.0);
    let bound = cert.c * cfg.delta * cfg.rho * cfg.rho;
    Ok(CertifyReport {
        aggregator: cfg.aggregator,
        bucket_size: s,
        workers: cfg.workers,
        byzantine: q,
        delta: cfg.delta,
        delta_max: cert.delta_max,
        c: cert.c,
        margin: cert.margin,
        bound,
        mean_error,
        std_error: (var / t).sqrt(),
        trials: cfg.trials,
        passed: mean_error * (1.0 + cfg.slack) <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bucket_sizes() {
        for (kind, s) in [
            (AggregatorKind::Krum, 1),
            (AggregatorKind::Cm, 2),
            (AggregatorKind::Rfa, 2),
            (AggregatorKind::Cclip, 1),
        ] {
            let r = certify_aggregator(&CertifyConfig {
                aggregator: kind,
                trials: 20,
                ..CertifyConfig::default()
            })
            .unwrap();
            assert_eq!(r.bucket_size, s, "{kind:?}");
            assert_eq!(r.byzantine, 2);
            assert!(r.mean_error.is_finite());
        }
    }

    #[test]
    fn mean_has_no_certificate() {
        let cfg = CertifyConfig {
            aggregator: AggregatorKind::Mean,
            ..CertifyConfig::default()
        };
        assert!(certify_aggregator(&cfg).is_err());
    }
}

//! Aggregation rules mapping `n` worker messages to one vector.
//!
//! All rules are pure functions of their inputs. Inputs are re-validated here
//! because Byzantine messages enter the server unchecked: a non-finite input is
//! reported as [`Error::NonFinite`] instead of poisoning the output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{self, ParamVector};

/// Smoothing floor of the Weiszfeld weights.
pub const DEFAULT_WEISZFELD_SMOOTHING: f64 = 1e-6;
/// Weiszfeld iterations used by RFA.
pub const DEFAULT_WEISZFELD_ITERS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Mean,
    Krum,
    Cm,
    Rfa,
    Cclip,
    TrimmedMean,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 6] = [
        AggregatorKind::Mean,
        AggregatorKind::Krum,
        AggregatorKind::Cm,
        AggregatorKind::Rfa,
        AggregatorKind::Cclip,
        AggregatorKind::TrimmedMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Mean => "mean",
            AggregatorKind::Krum => "krum",
            AggregatorKind::Cm => "cm",
            AggregatorKind::Rfa => "rfa",
            AggregatorKind::Cclip => "cclip",
            AggregatorKind::TrimmedMean => "trimmed_mean",
        }
    }
}

impl std::str::FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AggregatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s || (s == "tm" && *k == AggregatorKind::TrimmedMean))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown aggregator '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    /// Assumed Byzantine count (Krum, and trimmed mean when `trim_count` is unset).
    pub q: usize,
    pub weiszfeld_iters: usize,
    pub weiszfeld_smoothing: f64,
    /// CClip radius; `None` lets the trainer derive `10 / (1 - β)`.
    pub clip_radius: Option<f64>,
    /// Trimmed-mean count; `None` means `b = q`.
    pub trim_count: Option<usize>,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            kind: AggregatorKind::Mean,
            q: 0,
            weiszfeld_iters: DEFAULT_WEISZFELD_ITERS,
            weiszfeld_smoothing: DEFAULT_WEISZFELD_SMOOTHING,
            clip_radius: None,
            trim_count: None,
        }
    }
}

impl AggregatorConfig {
    pub fn new(kind: AggregatorKind, q: usize) -> Self {
        Self {
            kind,
            q,
            ..Self::default()
        }
    }

    pub fn trim(&self) -> usize {
        self.trim_count.unwrap_or(self.q)
    }

    /// Clip radius, falling back to the momentum rule `10 / (1 - β)`.
    pub fn clip_radius_for(&self, momentum: f64) -> f64 {
        self.clip_radius.unwrap_or(10.0 / (1.0 - momentum))
    }

    /// Copy of this config whose Byzantine assumptions fit `m` inputs.
    ///
    /// After bucketing each Byzantine input spoils at most one bucket, so the
    /// assumed count becomes `min(m - 1, q)`, further reduced to keep Krum and
    /// trimmed mean well-defined on `m` inputs.
    pub fn scaled_to(&self, m: usize) -> Self {
        let mut out = self.clone();
        out.q = self.q.min(m.saturating_sub(1));
        if self.kind == AggregatorKind::Krum {
            out.q = out.q.min(m.saturating_sub(3));
        }
        let b = self.trim().min(m.saturating_sub(1) / 2);
        out.trim_count = Some(b);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.weiszfeld_iters == 0 {
            return Err(Error::InvalidParameter(
                "weiszfeld_iters must be >= 1".into(),
            ));
        }
        if !(self.weiszfeld_smoothing > 0.0) {
            return Err(Error::InvalidParameter(
                "weiszfeld_smoothing must be positive".into(),
            ));
        }
        if let Some(tau) = self.clip_radius {
            if !(tau > 0.0) {
                return Err(Error::InvalidParameter(
                    "clip_radius must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `(δ_max, c)` robustness constants of an aggregator composed with bucketing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCert {
    pub delta_max: f64,
    pub c: f64,
    /// Free margin the constants were evaluated at (`None` when not applicable).
    pub margin: Option<f64>,
}

impl RobustnessCert {
    /// Krum ∘ bucketing: `δ_max = 1/4 − ν`, `c = 4 / (3ν(1/4 − ν))`.
    pub fn krum(margin: f64) -> Self {
        Self {
            delta_max: 0.25 - margin,
            c: 4.0 / (3.0 * margin * (0.25 - margin)),
            margin: Some(margin),
        }
    }

    /// Geometric median ∘ bucketing: `δ_max = 1/2 − ν`, `c = 1 / (ν(1/2 − ν))`.
    pub fn rfa(margin: f64) -> Self {
        Self {
            delta_max: 0.5 - margin,
            c: 1.0 / (margin * (0.5 - margin)),
            margin: Some(margin),
        }
    }

    /// Coordinate-wise median ∘ bucketing: as RFA with an extra factor `d`.
    pub fn cm(margin: f64, dim: usize) -> Self {
        let rfa = Self::rfa(margin);
        Self {
            c: rfa.c * dim as f64,
            ..rfa
        }
    }

    /// One-step centered clipping without bucketing: `δ_max = 0.1`, `c = O(1)`,
    /// pinned here to 1.
    pub fn cclip() -> Self {
        Self {
            delta_max: 0.1,
            c: 1.0,
            margin: None,
        }
    }

    /// Constants at the margin minimising `c` (ν = 1/8 for Krum, 1/4 otherwise).
    pub fn tightest(kind: AggregatorKind, dim: usize) -> Option<Self> {
        match kind {
            AggregatorKind::Krum => Some(Self::krum(0.125)),
            AggregatorKind::Rfa => Some(Self::rfa(0.25)),
            AggregatorKind::Cm => Some(Self::cm(0.25, dim)),
            AggregatorKind::Cclip => Some(Self::cclip()),
            AggregatorKind::Mean | AggregatorKind::TrimmedMean => None,
        }
    }
}

fn validated_dim(msgs: &[ParamVector]) -> Result<usize> {
    let first = msgs.first().ok_or(Error::EmptyInput)?;
    let d = first.dim();
    for m in msgs {
        m.check_dim(d)?;
        if !m.is_finite() {
            return Err(Error::NonFinite("worker message"));
        }
    }
    Ok(d)
}

/// Plain average of all messages.
pub fn aggregate_mean(msgs: &[ParamVector]) -> Result<ParamVector> {
    validated_dim(msgs)?;
    params::mean(msgs)
}

/// Krum scores: each input's summed squared distance to its `n − q − 2`
/// nearest other inputs.
pub fn krum_scores(msgs: &[ParamVector], q: usize) -> Result<Vec<f64>> {
    validated_dim(msgs)?;
    let n = msgs.len();
    if n < q + 3 {
        return Err(Error::KrumTooFewInputs { n, q });
    }
    let k = n - q - 2;
    let dists = if n >= 2 {
        params::pairwise_sq_dists(msgs)?
    } else {
        vec![vec![0.0]]
    };
    Ok(dists
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut others: Vec<f64> = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &d)| d)
                .collect();
            others.sort_by(f64::total_cmp);
            others[..k].iter().sum()
        })
        .collect())
}

/// Index selected by Krum; ties go to the lowest index.
pub fn krum_select(msgs: &[ParamVector], q: usize) -> Result<usize> {
    let scores = krum_scores(msgs, q)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn aggregate_krum(msgs: &[ParamVector], q: usize) -> Result<ParamVector> {
    let i = krum_select(msgs, q)?;
    Ok(msgs[i].clone())
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Coordinate-wise median; even counts use the midpoint of the middle pair.
pub fn aggregate_cm(msgs: &[ParamVector]) -> Result<ParamVector> {
    let d = validated_dim(msgs)?;
    let mut column = vec![0.0; msgs.len()];
    let out = (0..d)
        .map(|k| {
            for (c, m) in column.iter_mut().zip(msgs) {
                *c = m.as_slice()[k];
            }
            median_of(&mut column)
        })
        .collect();
    ParamVector::new(out)
}

/// Smoothed Weiszfeld iterations for the geometric median, started at the mean.
pub fn aggregate_rfa(msgs: &[ParamVector], iters: usize, smoothing: f64) -> Result<ParamVector> {
    let d = validated_dim(msgs)?;
    if iters == 0 || !(smoothing > 0.0) {
        return Err(Error::InvalidParameter(
            "rfa needs iters >= 1 and smoothing > 0".into(),
        ));
    }
    let mut v = params::mean(msgs)?;
    for _ in 0..iters {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        for m in msgs {
            let w = 1.0 / v.dist_sq(m).sqrt().max(smoothing);
            den += w;
            for (a, x) in num.iter_mut().zip(m.as_slice()) {
                *a += w * x;
            }
        }
        num.iter_mut().for_each(|a| *a /= den);
        v = ParamVector::new(num)?;
    }
    Ok(v)
}

/// One-step centered clipping around `center` with radius `tau`.
pub fn aggregate_cclip(
    msgs: &[ParamVector],
    center: &ParamVector,
    tau: f64,
) -> Result<ParamVector> {
    let d = validated_dim(msgs)?;
    center.check_dim(d)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(
            "clip radius must be positive".into(),
        ));
    }
    let mut acc = vec![0.0; d];
    for m in msgs {
        let diff = m.sub(center);
        let norm = diff.norm();
        let scale = if norm > tau { tau / norm } else { 1.0 };
        for (a, x) in acc.iter_mut().zip(diff.as_slice()) {
            *a += scale * x;
        }
    }
    let inv = 1.0 / msgs.len() as f64;
    let out = center
        .as_slice()
        .iter()
        .zip(&acc)
        .map(|(c, a)| c + a * inv)
        .collect();
    ParamVector::new(out)
}

/// Coordinate-wise mean after dropping the `b` largest and `b` smallest values.
pub fn aggregate_trimmed_mean(msgs: &[ParamVector], b: usize) -> Result<ParamVector> {
    let d = validated_dim(msgs)?;
    let n = msgs.len();
    if n < 2 * b + 1 {
        return Err(Error::TrimTooLarge { n, b });
    }
    let mut column = vec![0.0; n];
    let out = (0..d)
        .map(|k| {
            for (c, m) in column.iter_mut().zip(msgs) {
                *c = m.as_slice()[k];
            }
            column.sort_by(f64::total_cmp);
            let kept = &column[b..n - b];
            kept.iter().sum::<f64>() / kept.len() as f64
        })
        .collect();
    ParamVector::new(out)
}

/// Dispatches on `config.kind`. CClip needs a `center` and a resolved radius.
pub fn aggregate(
    config: &AggregatorConfig,
    msgs: &[ParamVector],
    center: Option<&ParamVector>,
) -> Result<ParamVector> {
    config.validate()?;
    match config.kind {
        AggregatorKind::Mean => aggregate_mean(msgs),
        AggregatorKind::Krum => aggregate_krum(msgs, config.q),
        AggregatorKind::Cm => aggregate_cm(msgs),
        AggregatorKind::Rfa => {
            aggregate_rfa(msgs, config.weiszfeld_iters, config.weiszfeld_smoothing)
        }
        AggregatorKind::Cclip => {
            let tau = config
                .clip_radius
                .ok_or_else(|| Error::InvalidParameter("cclip needs a clip radius".into()))?;
            let zero;
            let center = match center {
                Some(c) => c,
                None => {
                    zero = ParamVector::zeros(validated_dim(msgs)?);
                    &zero
                }
            };
            aggregate_cclip(msgs, center, tau)
        }
        AggregatorKind::TrimmedMean => aggregate_trimmed_mean(msgs, config.trim()),
    }
}

/// `‖out − mean of good messages‖²`.
pub fn aggregation_error(out: &ParamVector, msgs: &[ParamVector], good: &[usize]) -> Result<f64> {
    if good.is_empty() {
        return Err(Error::EmptyInput);
    }
    let good_mean = params::mean_of(msgs, good)?;
    out.check_dim(good_mean.dim())?;
    Ok(out.dist_sq(&good_mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn scalars(v: &[f64]) -> Vec<ParamVector> {
        v.iter().map(|&x| pv(&[x])).collect()
    }

    /// `2k+1` workers holding alternating `+1, −1, +1, …`.
    fn alternating(k: usize) -> Vec<ParamVector> {
        (0..2 * k + 1)
            .map(|i| pv(&[if i % 2 == 0 { 1.0 } else { -1.0 }]))
            .collect()
    }

    #[test]
    fn mean_examples() {
        assert_eq!(aggregate_mean(&scalars(&[1.0, 3.0])).unwrap(), pv(&[2.0]));
        let msgs = [pv(&[0.0, 0.0]), pv(&[0.0, 0.0]), pv(&[6.0, 3.0])];
        assert_eq!(aggregate_mean(&msgs).unwrap(), pv(&[2.0, 1.0]));
        // 2k+1 alternating: k+1 copies of +1 and k of -1.
        let out = aggregate_mean(&alternating(10)).unwrap().as_slice()[0];
        assert!((out - 1.0 / 21.0).abs() < 1e-15);
        assert!(matches!(aggregate_mean(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn krum_examples() {
        let msgs = scalars(&[0.0, 0.1, 0.2, 0.35, 10.0]);
        let scores = krum_scores(&msgs, 1).unwrap();
        let expected = [0.05, 0.02, 0.0325, 0.085, 189.1625];
        for (s, e) in scores.iter().zip(expected) {
            assert!((s - e).abs() < 1e-12, "{s} vs {e}");
        }
        assert_eq!(aggregate_krum(&msgs, 1).unwrap(), pv(&[0.1]));

        let same = vec![pv(&[1.5, -2.0]); 6];
        assert_eq!(aggregate_krum(&same, 2).unwrap(), pv(&[1.5, -2.0]));

        let out = aggregate_krum(&alternating(6), 0).unwrap().as_slice()[0];
        assert_eq!(out.abs(), 1.0);

        assert!(matches!(
            aggregate_krum(&scalars(&[1.0, 2.0, 3.0]), 1),
            Err(Error::KrumTooFewInputs { n: 3, q: 1 })
        ));
    }

    #[test]
    fn krum_tie_goes_to_lowest_index() {
        let msgs = scalars(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(krum_select(&msgs, 0).unwrap(), 0);
    }

    #[test]
    fn cm_examples() {
        assert_eq!(
            aggregate_cm(&scalars(&[1.0, 2.0, 9.0])).unwrap(),
            pv(&[2.0])
        );
        assert_eq!(
            aggregate_cm(&scalars(&[0.0, 1.0, 2.0, 100.0])).unwrap(),
            pv(&[1.5])
        );
        let msgs = [pv(&[1.0, 9.0]), pv(&[2.0, 1.0]), pv(&[3.0, 5.0])];
        assert_eq!(aggregate_cm(&msgs).unwrap(), pv(&[2.0, 5.0]));
        assert!(aggregate_cm(&[]).is_err());
    }

    #[test]
    fn rfa_examples() {
        let same = vec![pv(&[3.0, -1.0]); 5];
        for t in [1, 8, 50] {
            let out = aggregate_rfa(&same, t, 1e-6).unwrap();
            assert!(out.dist_sq(&pv(&[3.0, -1.0])) < 1e-24);
        }
        // on {0, 0, 1} the iteration is v <- v / (2 - v) from v = 1/3, halving
        // the distance to the median each step: 8 steps leave about 2e-3
        let mut v = 1.0 / 3.0;
        for t in 1..=10 {
            v /= 2.0 - v;
            let out = aggregate_rfa(&scalars(&[0.0, 0.0, 1.0]), t, 1e-6).unwrap();
            assert!((out.as_slice()[0] - v).abs() < 1e-15, "{out}");
        }
        let eight = aggregate_rfa(&scalars(&[0.0, 0.0, 1.0]), 8, 1e-6).unwrap();
        assert!(eight.as_slice()[0].abs() < 2e-3);
        let nine = aggregate_rfa(&scalars(&[0.0, 0.0, 1.0]), 9, 1e-6).unwrap();
        assert!(nine.as_slice()[0].abs() < 1e-3);
        assert!(aggregate_rfa(&same, 0, 1e-6).is_err());
    }

    #[test]
    fn cclip_examples() {
        let out = aggregate_cclip(&scalars(&[0.5, 2.0]), &pv(&[0.0]), 1.0).unwrap();
        assert!((out.as_slice()[0] - 0.75).abs() < 1e-15);

        let msgs = scalars(&[0.2, -0.3, 0.4]);
        let plain = aggregate_mean(&msgs).unwrap();
        let clipped = aggregate_cclip(&msgs, &pv(&[0.0]), 1.0).unwrap();
        assert!(clipped.dist_sq(&plain) < 1e-30);

        let far = scalars(&[1e3, -5e2, 7.0]);
        let out = aggregate_cclip(&far, &pv(&[0.0]), 1e12).unwrap();
        assert!(out.dist_sq(&aggregate_mean(&far).unwrap()) < 1e-20);
    }

    #[test]
    fn trimmed_mean_examples() {
        assert_eq!(
            aggregate_trimmed_mean(&scalars(&[0.0, 1.0, 2.0, 100.0]), 1).unwrap(),
            pv(&[1.5])
        );
        let msgs = scalars(&[3.0, 5.0, 10.0]);
        assert_eq!(
            aggregate_trimmed_mean(&msgs, 0).unwrap(),
            aggregate_mean(&msgs).unwrap()
        );
        assert_eq!(
            aggregate_trimmed_mean(&vec![pv(&[4.0]); 5], 2).unwrap(),
            pv(&[4.0])
        );
        assert!(matches!(
            aggregate_trimmed_mean(&scalars(&[1.0, 2.0]), 1),
            Err(Error::TrimTooLarge { n: 2, b: 1 })
        ));
    }

    #[test]
    fn aggregation_error_examples() {
        let msgs = scalars(&[-1.0, 1.0, 50.0]);
        assert_eq!(aggregation_error(&pv(&[0.0]), &msgs, &[0, 1]).unwrap(), 0.0);
        assert_eq!(aggregation_error(&pv(&[2.0]), &msgs, &[0, 1]).unwrap(), 4.0);
        assert!(aggregation_error(&pv(&[2.0]), &msgs, &[]).is_err());
    }

    #[test]
    fn non_finite_byzantine_input_is_an_error() {
        let mut msgs = scalars(&[1.0, 2.0, 3.0, 4.0]);
        msgs.push(ParamVector::from_untrusted(vec![f64::NAN]));
        for kind in AggregatorKind::ALL {
            let mut cfg = AggregatorConfig::new(kind, 1);
            cfg.clip_radius = Some(1.0);
            assert!(matches!(
                aggregate(&cfg, &msgs, None),
                Err(Error::NonFinite(_))
            ));
        }
    }

    #[test]
    fn cert_constants() {
        let k = RobustnessCert::tightest(AggregatorKind::Krum, 1).unwrap();
        assert!((k.delta_max - 0.125).abs() < 1e-15);
        assert!((k.c - 256.0 / 3.0).abs() < 1e-9);
        let r = RobustnessCert::tightest(AggregatorKind::Rfa, 1).unwrap();
        assert_eq!((r.delta_max, r.c), (0.25, 16.0));
        let c = RobustnessCert::tightest(AggregatorKind::Cm, 10).unwrap();
        assert_eq!(c.c, 160.0);
        // The chosen margins do minimise c over a fine grid.
        for i in 1..1000 {
            let nu = 0.25 * i as f64 / 1000.0;
            assert!(RobustnessCert::krum(nu).c >= k.c - 1e-9);
            assert!(RobustnessCert::rfa(2.0 * nu).c >= r.c - 1e-9);
        }
    }

    fn msg_sets(n: usize, d: usize) -> impl Strategy<Value = Vec<ParamVector>> {
        prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), n).prop_map(|vs| {
            vs.into_iter()
                .map(|v| ParamVector::new(v).unwrap())
                .collect()
        })
    }

    fn close(a: &ParamVector, b: &ParamVector, tol: f64) -> bool {
        a.dist_sq(b).sqrt() <= tol
    }

    proptest! {
        #[test]
        fn permutation_invariance(msgs in msg_sets(7, 3), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = msgs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            for kind in AggregatorKind::ALL {
                let mut cfg = AggregatorConfig::new(kind, 2);
                cfg.clip_radius = Some(3.0);
                let a = aggregate(&cfg, &msgs, None).unwrap();
                let b = aggregate(&cfg, &shuffled, None).unwrap();
                // random continuous inputs are tie-free, so Krum is covered too
                prop_assert!(close(&a, &b, 1e-9), "{:?}", kind);
            }
        }

        #[test]
        fn translation_equivariance(msgs in msg_sets(7, 3), shift in prop::collection::vec(-5.0f64..5.0, 3)) {
            let c = ParamVector::new(shift).unwrap();
            let moved: Vec<ParamVector> = msgs.iter().map(|m| m.add(&c)).collect();
            for kind in [AggregatorKind::Mean, AggregatorKind::Cm, AggregatorKind::Rfa, AggregatorKind::TrimmedMean] {
                let cfg = AggregatorConfig::new(kind, 2);
                let a = aggregate(&cfg, &msgs, None).unwrap().add(&c);
                let b = aggregate(&cfg, &moved, None).unwrap();
                prop_assert!(close(&a, &b, 1e-8), "{:?}", kind);
            }
            prop_assert_eq!(krum_select(&msgs, 2).unwrap(), krum_select(&moved, 2).unwrap());
            let center = ParamVector::new(vec![0.5, -0.5, 1.0]).unwrap();
            let a = aggregate_cclip(&msgs, &center, 3.0).unwrap().add(&c);
            let b = aggregate_cclip(&moved, &center.add(&c), 3.0).unwrap();
            prop_assert!(close(&a, &b, 1e-8));
        }

        #[test]
        fn robust_outputs_stay_in_envelope(msgs in msg_sets(6, 4)) {
            for kind in [AggregatorKind::Krum, AggregatorKind::Cm, AggregatorKind::Rfa] {
                let cfg = AggregatorConfig::new(kind, 1);
                let out = aggregate(&cfg, &msgs, None).unwrap();
                for k in 0..4 {
                    let lo = msgs.iter().map(|m| m.as_slice()[k]).fold(f64::INFINITY, f64::min);
                    let hi = msgs.iter().map(|m| m.as_slice()[k]).fold(f64::NEG_INFINITY, f64::max);
                    let v = out.as_slice()[k];
                    prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "{:?}", kind);
                }
            }
        }
    }
}

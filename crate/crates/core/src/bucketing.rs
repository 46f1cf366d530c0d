//! Random bucketing: shuffle the inputs, average them in groups of `s`, and
//! hand the bucket means to a base aggregator.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregators::{self, AggregatorConfig};
use crate::error::{Error, Result};
use crate::params::{self, ParamVector};
use crate::rng::{Purpose, SeededRng};

/// Default cap on the bucket size chosen by [`choose_s`].
pub const DEFAULT_S_CAP: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketingPlan {
    s: usize,
    permutation: Vec<usize>,
}

impl BucketingPlan {
    /// Plan over a fixed permutation. Used by tests and by callers that want
    /// the identity ordering.
    pub fn from_permutation(permutation: Vec<usize>, s: usize) -> Result<Self> {
        let n = permutation.len();
        if s < 1 || s > n {
            return Err(Error::InvalidBucketSize { n, s });
        }
        let mut seen = vec![false; n];
        for &p in &permutation {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidParameter(
                    "bucketing order is not a permutation".into(),
                ));
            }
        }
        Ok(Self { s, permutation })
    }

    pub fn identity(n: usize, s: usize) -> Result<Self> {
        Self::from_permutation((0..n).collect(), s)
    }

    pub fn n(&self) -> usize {
        self.permutation.len()
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn num_buckets(&self) -> usize {
        self.n().div_ceil(self.s)
    }

    /// Worker indices of each bucket, in bucket order. Only the last bucket
    /// may hold fewer than `s` indices.
    pub fn buckets(&self) -> impl Iterator<Item = &[usize]> {
        self.permutation.chunks(self.s)
    }
}

/// Draws a uniformly random permutation of `[n]` from `rng`.
pub fn make_plan<R: Rng + ?Sized>(n: usize, s: usize, rng: &mut R) -> Result<BucketingPlan> {
    if s < 1 || s > n {
        return Err(Error::InvalidBucketSize { n, s });
    }
    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(rng);
    Ok(BucketingPlan { s, permutation })
}

/// Bucket means in bucket order. The remainder bucket is divided by its
/// actual size.
pub fn bucketize(msgs: &[ParamVector], plan: &BucketingPlan) -> Result<Vec<ParamVector>> {
    if msgs.len() != plan.n() {
        return Err(Error::InvalidParameter(format!(
            "plan covers {} workers but {} messages were given",
            plan.n(),
            msgs.len()
        )));
    }
    plan.buckets().map(|b| params::mean_of(msgs, b)).collect()
}

/// Aggregates `msgs` with `base` after `s`-bucketing. `s = 1` skips the
/// shuffle and applies `base` directly, since a pure shuffle cannot change a
/// permutation-invariant rule.
pub fn robust_aggregate<R: Rng + ?Sized>(
    msgs: &[ParamVector],
    s: usize,
    base: &AggregatorConfig,
    rng: &mut R,
    center: Option<&ParamVector>,
) -> Result<ParamVector> {
    if msgs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if s == 1 {
        if s > msgs.len() {
            return Err(Error::InvalidBucketSize { n: msgs.len(), s });
        }
        return aggregators::aggregate(&base.scaled_to(msgs.len()), msgs, center);
    }
    let plan = make_plan(msgs.len(), s, rng)?;
    let buckets = bucketize(msgs, &plan)?;
    aggregators::aggregate(&base.scaled_to(buckets.len()), &buckets, center)
}

/// Bucket size `⌊δ_max / δ⌋` clamped to `[1, s_cap]`; `δ = 0` gives `s_cap`.
pub fn choose_s(delta: f64, delta_max: f64, s_cap: usize) -> usize {
    let s_cap = s_cap.max(1);
    if delta <= 0.0 {
        return s_cap;
    }
    // guard against 0.25/0.05 landing just below an integer
    let ratio = delta_max / delta;
    let s = (ratio + 1e-9 * ratio.max(1.0)).floor();
    (s.max(1.0) as usize).min(s_cap)
}

/// Monte-Carlo summary of how bucketing reshapes a set of inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub n: usize,
    pub s: usize,
    pub q: usize,
    pub trials: usize,
    /// Mean good-bucket pairwise variance over mean good-input pairwise variance.
    pub variance_ratio: f64,
    /// Smallest fraction of all-good buckets seen in any trial.
    pub good_bucket_frac: f64,
    /// The lower bound `1 − (q/n)s` the fraction is compared against, with `q = round(δn)`.
    pub good_bucket_bound: f64,
    /// Whether every coordinate of the bucket-mean bias is within 3 standard errors of 0.
    pub mean_preserved: bool,
    pub max_bias_z: f64,
}

/// Checks the bucketing variance-reduction properties by simulation.
///
/// `sampler` draws the `n` inputs of one trial. The last `round(δn)` indices
/// are treated as Byzantine; their values are irrelevant to the report except
/// through which buckets they spoil. Only full buckets made of good inputs
/// enter the variance and bias estimates.
pub fn lemma1_check<R, F>(
    mut sampler: F,
    n: usize,
    s: usize,
    delta: f64,
    trials: usize,
    rng: &mut R,
) -> Result<Lemma1Report>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Vec<ParamVector>,
{
    if trials < 100 {
        return Err(Error::InvalidParameter(
            "lemma1_check needs >= 100 trials".into(),
        ));
    }
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::InvalidParameter("delta must be in [0, 1/2)".into()));
    }
    let q = (delta * n as f64).round() as usize;
    let good: Vec<usize> = (0..n - q).collect();
    let is_good = |i: usize| i < n - q;

    let mut input_var_sum = 0.0;
    let mut bucket_var_sum = 0.0;
    let mut bucket_var_trials = 0usize;
    let mut min_good_frac = f64::INFINITY;
    let mut bias_sum: Vec<f64> = Vec::new();
    let mut bias_sq_sum: Vec<f64> = Vec::new();
    let mut bias_count = 0usize;

    for _ in 0..trials {
        let xs = sampler(rng);
        if xs.len() != n {
            return Err(Error::InvalidParameter(format!(
                "sampler produced {} vectors, expected {n}",
                xs.len()
            )));
        }
        input_var_sum += params::empirical_pairwise_variance(&xs, &good)?;
        let good_mean = params::mean_of(&xs, &good)?;

        let plan = make_plan(n, s, rng)?;
        let ys = bucketize(&xs, &plan)?;
        let good_buckets: Vec<usize> = plan
            .buckets()
            .enumerate()
            .filter(|(_, b)| b.iter().all(|&i| is_good(i)))
            .map(|(k, _)| k)
            .collect();
        min_good_frac = min_good_frac.min(good_buckets.len() as f64 / ys.len() as f64);

        let full_good: Vec<usize> = good_buckets
            .iter()
            .copied()
            .filter(|&k| plan.buckets().nth(k).map_or(0, <[usize]>::len) == s)
            .collect();
        if full_good.len() >= 2 {
            bucket_var_sum += params::empirical_pairwise_variance(&ys, &full_good)?;
            bucket_var_trials += 1;
        }
        // bias of a fixed bucket slot: the first bucket, when it is good and full
        if full_good.first() == Some(&0) {
            let diff = ys[0].sub(&good_mean);
            if bias_sum.is_empty() {
                bias_sum = vec![0.0; diff.dim()];
                bias_sq_sum = vec![0.0; diff.dim()];
            }
            for (k, v) in diff.as_slice().iter().enumerate() {
                bias_sum[k] += v;
                bias_sq_sum[k] += v * v;
            }
            bias_count += 1;
        }
    }

    let input_var = input_var_sum / trials as f64;
    let bucket_var = if bucket_var_trials > 0 {
        bucket_var_sum / bucket_var_trials as f64
    } else {
        f64::NAN
    };
    let mut max_bias_z: f64 = 0.0;
    let mut mean_preserved = bias_count >= 2;
    if bias_count >= 2 {
        let c = bias_count as f64;
        for (s1, s2) in bias_sum.iter().zip(&bias_sq_sum) {
            let m = s1 / c;
            let var = ((s2 / c) - m * m).max(0.0) * c / (c - 1.0);
            let se = (var / c).sqrt();
            if se > 0.0 {
                max_bias_z = max_bias_z.max(m.abs() / se);
                mean_preserved &= m.abs() <= 3.0 * se;
            } else {
                mean_preserved &= m.abs() <= 1e-12;
            }
        }
    }

    Ok(Lemma1Report {
        n,
        s,
        q,
        trials,
        variance_ratio: if input_var > 0.0 {
            bucket_var / input_var
        } else {
            f64::NAN
        },
        good_bucket_frac: min_good_frac,
        good_bucket_bound: 1.0 - (q as f64 / n as f64) * s as f64,
        mean_preserved,
        max_bias_z,
    })
}

/// [`lemma1_check`] on i.i.d. standard normal inputs in `dim` dimensions.
pub fn lemma1_gaussian(
    n: usize,
    s: usize,
    delta: f64,
    dim: usize,
    trials: usize,
    seed: u64,
) -> Result<Lemma1Report> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dim must be >= 1".into()));
    }
    let sampler = |rng: &mut crate::rng::StreamRng| {
        (0..n)
            .map(|_| {
                ParamVector::from_untrusted(
                    (0..dim)
                        .map(|_| {
                            let e: f64 = StandardNormal.sample(rng);
                            e
                        })
                        .collect(),
                )
            })
            .collect()
    };
    let mut rng = SeededRng::new(seed).stream(Purpose::Lemma, s as u64, 0);
    lemma1_check(sampler, n, s, delta, trials, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::AggregatorKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn assert_partition(plan: &BucketingPlan) {
        let mut seen = vec![0; plan.n()];
        let sizes: Vec<usize> = plan.buckets().map(<[usize]>::len).collect();
        for b in plan.buckets() {
            for &i in b {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(sizes.len(), plan.num_buckets());
        assert!(sizes.iter().all(|&z| z <= plan.s()));
        assert!(sizes[..sizes.len() - 1].iter().all(|&z| z == plan.s()));
    }

    #[test]
    fn plan_shapes() {
        let p = make_plan(4, 4, &mut rng(1)).unwrap();
        assert_eq!(p.num_buckets(), 1);
        assert_partition(&p);

        let p = make_plan(5, 2, &mut rng(2)).unwrap();
        let sizes: Vec<usize> = p.buckets().map(<[usize]>::len).collect();
        assert_eq!(sizes, vec![2, 2, 1]);

        let p = make_plan(6, 1, &mut rng(3)).unwrap();
        assert_eq!(p.num_buckets(), 6);
        assert_partition(&p);

        assert!(make_plan(5, 0, &mut rng(0)).is_err());
        assert!(make_plan(5, 6, &mut rng(0)).is_err());
    }

    #[test]
    fn plans_partition_for_many_shapes() {
        let mut r = rng(9);
        for n in 1..30 {
            for s in 1..=n {
                assert_partition(&make_plan(n, s, &mut r).unwrap());
            }
        }
    }

    #[test]
    fn plan_is_seed_deterministic() {
        assert_eq!(
            make_plan(20, 3, &mut rng(5)).unwrap(),
            make_plan(20, 3, &mut rng(5)).unwrap()
        );
    }

    #[test]
    fn bucketize_examples() {
        let msgs: Vec<ParamVector> = [0.0, 2.0, 4.0, 8.0].iter().map(|&x| pv(&[x])).collect();
        let plan = BucketingPlan::identity(4, 2).unwrap();
        assert_eq!(
            bucketize(&msgs, &plan).unwrap(),
            vec![pv(&[1.0]), pv(&[6.0])]
        );

        let plan = make_plan(4, 1, &mut rng(4)).unwrap();
        let ys = bucketize(&msgs, &plan).unwrap();
        let expect: Vec<ParamVector> = plan
            .permutation()
            .iter()
            .map(|&i| msgs[i].clone())
            .collect();
        assert_eq!(ys, expect);

        let same = vec![pv(&[2.5, 1.0]); 7];
        let plan = make_plan(7, 3, &mut rng(6)).unwrap();
        assert!(bucketize(&same, &plan)
            .unwrap()
            .iter()
            .all(|y| *y == pv(&[2.5, 1.0])));

        // remainder bucket divides by its own size
        let plan = BucketingPlan::identity(5, 2).unwrap();
        let msgs: Vec<ParamVector> = (0..5).map(|i| pv(&[i as f64])).collect();
        assert_eq!(bucketize(&msgs, &plan).unwrap()[2], pv(&[4.0]));
    }

    #[test]
    fn robust_aggregate_examples() {
        let msgs: Vec<ParamVector> = [1.0, 5.0, -2.0].iter().map(|&x| pv(&[x])).collect();
        let base = AggregatorConfig::new(AggregatorKind::Mean, 0);
        let out = robust_aggregate(&msgs, 1, &base, &mut rng(0), None).unwrap();
        assert!((out.as_slice()[0] - 4.0 / 3.0).abs() < 1e-15);

        let msgs: Vec<ParamVector> = [0.0, 0.0, 10.0, 10.0].iter().map(|&x| pv(&[x])).collect();
        let plan = BucketingPlan::identity(4, 2).unwrap();
        let ys = bucketize(&msgs, &plan).unwrap();
        let out = aggregators::aggregate_cm(&ys).unwrap();
        assert_eq!(out, pv(&[5.0]));
    }

    #[test]
    fn krum_after_bucketing_on_alternating_signs() {
        // 13 workers holding alternating ±1; pairs mixing signs average to 0.
        let msgs: Vec<ParamVector> = (0..13)
            .map(|i| pv(&[if i % 2 == 0 { 1.0 } else { -1.0 }]))
            .collect();
        let base = AggregatorConfig::new(AggregatorKind::Krum, 0);
        let mut total = 0.0;
        let trials = 400;
        for seed in 0..trials {
            let out = robust_aggregate(&msgs, 2, &base, &mut rng(seed), None).unwrap();
            total += out.as_slice()[0].abs();
        }
        assert!(total / (trials as f64) < 1.0);
    }

    #[test]
    fn choose_s_examples() {
        assert_eq!(choose_s(0.1, 0.25, 5), 2);
        assert_eq!(choose_s(0.2, 0.5, 5), 2);
        assert_eq!(choose_s(0.0, 0.25, 5), 5);
        assert_eq!(choose_s(0.05, 0.25, 10), 5);
        assert_eq!(choose_s(0.3, 0.25, 5), 1);
        assert_eq!(choose_s(0.01, 0.25, 5), 5);
    }

    fn normal_sampler(n: usize) -> impl FnMut(&mut ChaCha8Rng) -> Vec<ParamVector> {
        move |r: &mut ChaCha8Rng| {
            (0..n)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(r);
                    pv(&[x])
                })
                .collect()
        }
    }

    #[test]
    fn lemma1_s1_keeps_variance() {
        let rep = lemma1_check(normal_sampler(24), 24, 1, 0.0, 1000, &mut rng(11)).unwrap();
        assert!((rep.variance_ratio - 1.0).abs() < 0.05, "{rep:?}");
        assert!(rep.mean_preserved);
    }

    #[test]
    fn lemma1_s2_halves_variance() {
        let rep = lemma1_check(normal_sampler(24), 24, 2, 0.0, 1000, &mut rng(12)).unwrap();
        assert!((rep.variance_ratio - 0.5).abs() < 0.05, "{rep:?}");
        assert!(rep.mean_preserved, "{rep:?}");
    }

    #[test]
    fn lemma1_good_bucket_fraction() {
        let rep = lemma1_check(normal_sampler(24), 24, 3, 1.0 / 12.0, 1000, &mut rng(13)).unwrap();
        assert_eq!(rep.q, 2);
        assert!(rep.good_bucket_frac >= 0.75, "{rep:?}");
        assert!(rep.good_bucket_frac >= rep.good_bucket_bound - 1e-12);
    }

    #[test]
    fn byzantine_inputs_spoil_at_most_q_buckets() {
        let mut r = rng(21);
        for _ in 0..500 {
            let (n, s, q) = (24, 3, 4);
            let plan = make_plan(n, s, &mut r).unwrap();
            let spoiled = plan
                .buckets()
                .filter(|b| b.iter().any(|&i| i >= n - q))
                .count();
            assert!(spoiled <= q);
            assert!(plan.num_buckets() - spoiled >= plan.num_buckets() - q);
        }
    }

    #[test]
    fn lemma1_rejects_few_trials() {
        assert!(lemma1_check(normal_sampler(4), 4, 2, 0.0, 10, &mut rng(0)).is_err());
    }
}

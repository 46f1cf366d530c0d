//! Omniscient Byzantine attacks.
//!
//! Attackers see every good message of the round and produce the `q` Byzantine
//! messages. All attacks act on what the server aggregates, i.e. the workers'
//! momentum vectors. Label flipping is the exception: it corrupts the data the
//! Byzantine workers train on, and is driven by the trainer.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{self, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    BitFlip,
    LabelFlip,
    Mimic,
    Ipm,
    Alie,
}

impl AttackKind {
    /// The five attacks used in the attack grid.
    pub const ACTIVE: [AttackKind; 5] = [
        AttackKind::BitFlip,
        AttackKind::LabelFlip,
        AttackKind::Mimic,
        AttackKind::Ipm,
        AttackKind::Alie,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::BitFlip => "bit_flip",
            AttackKind::LabelFlip => "label_flip",
            AttackKind::Mimic => "mimic",
            AttackKind::Ipm => "ipm",
            AttackKind::Alie => "alie",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            AttackKind::None,
            AttackKind::BitFlip,
            AttackKind::LabelFlip,
            AttackKind::Mimic,
            AttackKind::Ipm,
            AttackKind::Alie,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown attack '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// IPM strength.
    pub epsilon: f64,
    /// Fixed ALIE multiplier instead of the one derived from `(n, q)`.
    pub z_override: Option<f64>,
    /// Length of the mimic attacker's direction-finding phase.
    pub init_phase_steps: usize,
    /// Re-pick the mimicked worker every step after the initial phase.
    pub mimic_retarget: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            epsilon: 0.1,
            z_override: None,
            init_phase_steps: 10,
            mimic_retarget: false,
        }
    }
}

impl AttackConfig {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == AttackKind::Ipm && !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("ipm needs epsilon > 0".into()));
        }
        if self.kind == AttackKind::Mimic && self.init_phase_steps < 1 {
            return Err(Error::InvalidParameter(
                "mimic needs init_phase_steps >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Every Byzantine worker sends the negated mean good message.
pub fn attack_bit_flip(good: &[ParamVector], q: usize) -> Result<Vec<ParamVector>> {
    let m = params::mean(good)?;
    Ok(vec![m.scale(-1.0); q])
}

/// Label map `y ↦ (classes − 1) − y`.
pub fn attack_label_flip(label: u32, num_classes: u32) -> Result<u32> {
    if label >= num_classes {
        return Err(Error::LabelOutOfRange(label));
    }
    Ok(num_classes - 1 - label)
}

/// Inner product manipulation: `−ε` times the mean good message.
pub fn attack_ipm(good: &[ParamVector], epsilon: f64, q: usize) -> Result<Vec<ParamVector>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("ipm needs epsilon > 0".into()));
    }
    let m = params::mean(good)?;
    Ok(vec![m.scale(-epsilon); q])
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF by bisection, to `|Φ(z) − p| < 1e−10`.
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "probability {p} outside (0, 1)"
        )));
    }
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = normal_cdf(mid);
        if (f - p).abs() < 1e-10 && hi - lo < 1e-12 {
            return Ok(mid);
        }
        if f < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// ALIE multiplier: `s = ⌊n/2 + 1⌋ − q`, `z = Φ⁻¹((n − q − s) / (n − q))`.
pub fn alie_z(n: usize, q: usize) -> Result<f64> {
    if n < q + 2 {
        return Err(Error::InvalidParameter(format!(
            "alie needs n - q >= 2 (n={n}, q={q})"
        )));
    }
    let s = (n / 2 + 1) as i64 - q as i64;
    let good = (n - q) as f64;
    let p = (good - s as f64) / good;
    inverse_normal_cdf(p)
}

/// "A little is enough": `μ_G − z σ_G` coordinate-wise, with the population
/// standard deviation of the good messages.
pub fn attack_alie(
    good: &[ParamVector],
    n: usize,
    q: usize,
    z_override: Option<f64>,
) -> Result<Vec<ParamVector>> {
    let mu = params::mean(good)?;
    if good.len() < 2 {
        return Ok(vec![mu; q]);
    }
    let z = match z_override {
        Some(z) => z,
        None => alie_z(n, q)?,
    };
    let inv = 1.0 / good.len() as f64;
    let out: Vec<f64> = mu
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let var = good
                .iter()
                .map(|g| (g.as_slice()[k] - m).powi(2))
                .sum::<f64>()
                * inv;
            m - z * var.sqrt()
        })
        .collect();
    Ok(vec![ParamVector::new(out)?; q])
}

/// Streaming top-variance direction of the good messages, plus the mimicked
/// worker once chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MimicState {
    /// Unit-norm direction estimate.
    pub z: ParamVector,
    /// Running mean of all good messages seen.
    pub mu: ParamVector,
    /// Updates absorbed so far.
    pub t: usize,
    /// Index (into the good-message list) of the mimicked worker.
    pub target: Option<usize>,
    /// Per-good-worker sums of messages over the initial phase.
    pub sums: Vec<ParamVector>,
}

impl MimicState {
    pub fn new(z0: ParamVector) -> Result<Self> {
        let norm = z0.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidParameter(
                "initial direction must be nonzero".into(),
            ));
        }
        let d = z0.dim();
        Ok(Self {
            z: z0.scale(1.0 / norm),
            mu: ParamVector::zeros(d),
            t: 0,
            target: None,
            sums: Vec::new(),
        })
    }

    /// Uniformly random unit direction.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let v = ParamVector::new(v)?;
            if v.norm() > 1e-12 {
                return Self::new(v);
            }
        }
    }
}

/// One streaming Oja step on a round of good messages, followed by
/// renormalisation of the direction.
pub fn mimic_update(state: &MimicState, good: &[ParamVector]) -> Result<MimicState> {
    let d = state.z.dim();
    for g in good {
        g.check_dim(d)?;
    }
    let round_mean = params::mean(good)?;
    let t = state.t as f64;
    let mu = state
        .mu
        .scale(t / (t + 1.0))
        .add(&round_mean.scale(1.0 / (t + 1.0)));

    // Σ_i (x_i − μ)(x_i − μ)ᵀ z without forming the matrix
    let mut cov_z = ParamVector::zeros(d);
    for g in good {
        let c = g.sub(&mu);
        let proj = c.dot(&state.z);
        cov_z.axpy(proj, &c);
    }
    let next = state
        .z
        .scale(t / (t + 1.0))
        .add(&cov_z.scale(1.0 / (t + 1.0)));
    let norm = next.norm();
    let z = if norm > 1e-300 && norm.is_finite() {
        next.scale(1.0 / norm)
    } else {
        state.z.clone()
    };

    let mut sums = state.sums.clone();
    if sums.len() != good.len() {
        sums = vec![ParamVector::zeros(d); good.len()];
    }
    for (s, g) in sums.iter_mut().zip(good) {
        s.axpy(1.0, g);
    }

    Ok(MimicState {
        z,
        mu,
        t: state.t + 1,
        target: state.target,
        sums,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetRule {
    /// `argmax_i |zᵀ v_i|`, applied to per-worker sums at the end of the initial phase.
    AbsProjection,
    /// `argmax_i zᵀ v_i`, applied to the current round's messages.
    Projection,
}

/// Index maximising the projection of `vectors` on `z`; ties go to the lowest index.
pub fn mimic_pick_target(
    z: &ParamVector,
    vectors: &[ParamVector],
    rule: TargetRule,
) -> Result<usize> {
    if vectors.is_empty() {
        return Err(Error::EmptyInput);
    }
    let score = |v: &ParamVector| {
        let p = z.dot(v);
        match rule {
            TargetRule::AbsProjection => p.abs(),
            TargetRule::Projection => p,
        }
    };
    let mut best = 0;
    let mut best_score = score(&vectors[0]);
    for (i, v) in vectors.iter().enumerate().skip(1) {
        v.check_dim(z.dim())?;
        let s = score(v);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    Ok(best)
}

/// `q` verbatim copies of good message `target`.
pub fn attack_mimic(good: &[ParamVector], target: usize, q: usize) -> Result<Vec<ParamVector>> {
    let msg = good.get(target).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "mimic target {target} out of {} good workers",
            good.len()
        ))
    })?;
    Ok(vec![msg.clone(); q])
}

/// Stateful mimic driver used by the trainer.
///
/// During the initial phase the attackers copy good worker 0 while the
/// direction estimate warms up. At the end of the phase the target is fixed to
/// the worker with the largest absolute summed projection; with `retarget` the
/// target is re-chosen each later step by signed projection of that step's
/// messages.
#[derive(Clone, Debug)]
pub struct MimicAttacker {
    state: MimicState,
    init_phase_steps: usize,
    retarget: bool,
}

impl MimicAttacker {
    pub fn new(state: MimicState, init_phase_steps: usize, retarget: bool) -> Self {
        Self {
            state,
            init_phase_steps: init_phase_steps.max(1),
            retarget,
        }
    }

    pub fn state(&self) -> &MimicState {
        &self.state
    }

    pub fn step(&mut self, good: &[ParamVector], q: usize) -> Result<Vec<ParamVector>> {
        if self.state.t < self.init_phase_steps {
            self.state = mimic_update(&self.state, good)?;
            if self.state.t == self.init_phase_steps {
                let target =
                    mimic_pick_target(&self.state.z, &self.state.sums, TargetRule::AbsProjection)?;
                self.state.target = Some(target);
                return attack_mimic(good, target, q);
            }
            return attack_mimic(good, 0, q);
        }
        let target = if self.retarget {
            mimic_pick_target(&self.state.z, good, TargetRule::Projection)?
        } else {
            self.state.target.unwrap_or(0)
        };
        attack_mimic(good, target, q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn bit_flip_examples() {
        let good = [pv(&[1.0, 0.0]), pv(&[3.0, -2.0])];
        assert_eq!(attack_bit_flip(&good, 1).unwrap(), vec![pv(&[-2.0, 1.0])]);
        let zero = [pv(&[1.0]), pv(&[-1.0])];
        assert_eq!(attack_bit_flip(&zero, 1).unwrap()[0].as_slice()[0], 0.0);
        let out = attack_bit_flip(&good, 3).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|m| *m == out[0]));
    }

    #[test]
    fn label_flip_examples() {
        assert_eq!(attack_label_flip(0, 10).unwrap(), 9);
        assert_eq!(attack_label_flip(9, 10).unwrap(), 0);
        assert_eq!(attack_label_flip(4, 10).unwrap(), 5);
        assert!(matches!(
            attack_label_flip(10, 10),
            Err(Error::LabelOutOfRange(10))
        ));
    }

    #[test]
    fn ipm_examples() {
        let out = attack_ipm(&[pv(&[10.0])], 0.1, 2).unwrap();
        assert_eq!(out.len(), 2);
        assert!((out[0].as_slice()[0] + 1.0).abs() < 1e-15);
        let out = attack_ipm(&[pv(&[1.0]), pv(&[-1.0])], 1.0, 1).unwrap();
        assert_eq!(out[0].as_slice()[0], 0.0);
        assert!(attack_ipm(&[pv(&[1.0])], 0.0, 1).is_err());
    }

    #[test]
    fn ipm_keeps_positive_inner_product_below_threshold() {
        // full mean = ((n−q) − εq)/n · good mean, positive iff ε < (n−q)/q
        let good: Vec<ParamVector> = (0..20).map(|i| pv(&[1.0 + i as f64, 2.0])).collect();
        let gm = params::mean(&good).unwrap();
        for (eps, positive) in [(0.1, true), (3.9, true), (4.1, false)] {
            let mut all = good.clone();
            all.extend(attack_ipm(&good, eps, 5).unwrap());
            let full = params::mean(&all).unwrap();
            assert_eq!(full.dot(&gm) > 0.0, positive, "eps={eps}");
            let closed_form = (20.0 - eps * 5.0) / 25.0;
            assert!(full.sub(&gm.scale(closed_form)).norm() < 1e-9);
        }
    }

    #[test]
    fn alie_z_values() {
        assert!((alie_z(25, 5).unwrap() - 0.2533).abs() < 1e-3);
        assert!((alie_z(20, 3).unwrap() - 0.0738).abs() < 1e-3);
    }

    #[test]
    fn alie_z_monotone_in_q() {
        for n in 5..=50 {
            let mut prev = f64::NEG_INFINITY;
            for q in 0..(n - 1) / 2 {
                let z = alie_z(n, q).unwrap();
                assert!(z > prev, "n={n} q={q}");
                prev = z;
            }
        }
    }

    #[test]
    fn alie_messages() {
        let good = [pv(&[0.0, 1.0]), pv(&[2.0, 1.0])];
        let out = attack_alie(&good, 4, 1, Some(1.0)).unwrap();
        assert_eq!(out, vec![pv(&[0.0, 1.0])]);
        let same = vec![pv(&[3.0, -1.0]); 4];
        assert_eq!(attack_alie(&same, 6, 2, None).unwrap()[1], pv(&[3.0, -1.0]));
        assert_eq!(
            attack_alie(&[pv(&[5.0])], 3, 1, None).unwrap(),
            vec![pv(&[5.0])]
        );
    }

    #[test]
    fn inverse_cdf_basics() {
        assert!(inverse_normal_cdf(0.5).unwrap().abs() < 1e-10);
        assert!((inverse_normal_cdf(0.9).unwrap() - 1.281_551_565_5).abs() < 1e-8);
        assert!(inverse_normal_cdf(0.0).is_err());
        assert!(inverse_normal_cdf(1.0).is_err());
    }

    #[test]
    fn mimic_zero_variance_keeps_direction() {
        let z0 = pv(&[0.6, 0.8]);
        let mut st = MimicState::new(z0.clone()).unwrap();
        for _ in 0..5 {
            st = mimic_update(&st, &vec![pv(&[1.0, 2.0]); 3]).unwrap();
            assert!(st.z.sub(&z0).norm() < 1e-12);
        }
        assert!((st.mu.sub(&pv(&[1.0, 2.0]))).norm() < 1e-12);
    }

    #[test]
    fn mimic_one_dimensional_is_sign() {
        let st = MimicState::new(pv(&[0.3])).unwrap();
        let st = mimic_update(&st, &[pv(&[1.0]), pv(&[-2.0]), pv(&[0.5])]).unwrap();
        assert!((st.z.as_slice()[0].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mimic_direction_stays_unit() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut st = MimicState::random(6, &mut rng).unwrap();
        for _ in 0..30 {
            let msgs: Vec<ParamVector> = (0..5)
                .map(|_| {
                    ParamVector::new((0..6).map(|_| StandardNormal.sample(&mut rng)).collect())
                        .unwrap()
                })
                .collect();
            st = mimic_update(&st, &msgs).unwrap();
            assert!((st.z.norm() - 1.0).abs() < 1e-12);
            assert_eq!(st.mu.dim(), 6);
        }
    }

    #[test]
    fn pick_target_examples() {
        let z = pv(&[1.0]);
        let msgs = [pv(&[-3.0]), pv(&[2.0])];
        assert_eq!(
            mimic_pick_target(&z, &msgs, TargetRule::AbsProjection).unwrap(),
            0
        );
        assert_eq!(
            mimic_pick_target(&z, &msgs, TargetRule::Projection).unwrap(),
            1
        );
        assert_eq!(
            mimic_pick_target(&z, &[pv(&[4.0])], TargetRule::Projection).unwrap(),
            0
        );
        let same = vec![pv(&[1.0]); 4];
        assert_eq!(
            mimic_pick_target(&z, &same, TargetRule::AbsProjection).unwrap(),
            0
        );
    }

    #[test]
    fn mimic_copies_verbatim() {
        let good = [pv(&[0.0, 0.0]), pv(&[1.0, 2.0])];
        let out = attack_mimic(&good, 1, 3).unwrap();
        assert_eq!(out, vec![pv(&[1.0, 2.0]); 3]);
        assert!(attack_mimic(&good, 2, 1).is_err());
    }

    #[test]
    fn mimic_attacker_messages_are_good_messages() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut atk = MimicAttacker::new(MimicState::random(3, &mut rng).unwrap(), 4, true);
        for _ in 0..10 {
            let good: Vec<ParamVector> = (0..6)
                .map(|_| {
                    ParamVector::new((0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
                        .unwrap()
                })
                .collect();
            let bad = atk.step(&good, 2).unwrap();
            assert!(bad.iter().all(|b| good.contains(b)));
        }
        assert!(atk.state().target.is_some());
    }
}

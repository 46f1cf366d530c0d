//! Labelled datasets and the non-iid constructions applied to them.

use rand::seq::SliceRandom;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense feature matrix (row-major) with integer labels in `[0, num_classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u32>,
    feature_dim: usize,
    num_classes: u32,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<u32>,
        feature_dim: usize,
        num_classes: u32,
    ) -> Result<Self> {
        if feature_dim == 0 || features.len() != labels.len() * feature_dim {
            return Err(Error::InvalidParameter(format!(
                "{} feature values do not form {} rows of width {feature_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange(l));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            labels,
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes as usize];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: u32,
    pub per_class: usize,
    pub feature_dim: usize,
    /// Standard deviation of the class centroids; samples add unit noise.
    pub separation: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            per_class: 200,
            feature_dim: 20,
            separation: 1.0,
        }
    }
}

/// Gaussian class clusters. Centroids come from `centroid_rng` so train and test
/// splits can share them while drawing samples from different streams.
pub fn synthetic_classification(
    spec: &SyntheticSpec,
    centroid_rng: &mut dyn RngCore,
    sample_rng: &mut dyn RngCore,
) -> Result<Dataset> {
    let p = spec.feature_dim;
    let centroids: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..p)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(centroid_rng);
                    spec.separation * e
                })
                .collect()
        })
        .collect();
    let mut features = Vec::with_capacity(spec.num_classes as usize * spec.per_class * p);
    let mut labels = Vec::new();
    for (c, centroid) in centroids.iter().enumerate() {
        for _ in 0..spec.per_class {
            for mu in centroid {
                let e: f64 = StandardNormal.sample(sample_rng);
                features.push(mu + e);
            }
            labels.push(c as u32);
        }
    }
    Dataset::new(features, labels, p, spec.num_classes)
}

/// Sort by label, cut into `n_good` contiguous chunks of `⌈N/n_good⌉`, pad a
/// short last chunk with its own samples, then shuffle within each shard.
pub fn partition_heterogeneous(
    data: &Dataset,
    n_good: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Dataset>> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if n_good == 0 {
        return Err(Error::InvalidParameter("n_good must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by_key(|&i| data.label(i));
    let chunk = data.len().div_ceil(n_good);
    if (n_good - 1) * chunk >= data.len() {
        return Err(Error::InvalidParameter(format!(
            "{} samples cannot fill {n_good} chunks of {chunk}",
            data.len()
        )));
    }
    order
        .chunks(chunk)
        .map(|c| {
            let mut idx = c.to_vec();
            let own = idx.len();
            let mut k = 0;
            while idx.len() < chunk {
                idx.push(c[k % own]);
                k += 1;
            }
            idx.shuffle(rng);
            Ok(data.subset(&idx))
        })
        .collect()
}

/// Long-tail factor `α = 1/γ⁹` of a 10-class subsample.
pub fn imbalance_ratio(gamma: f64) -> f64 {
    gamma.powi(-9)
}

/// Class `i` keeps `⌊count_i · γ^i⌋` samples drawn without replacement;
/// surviving samples keep their original order.
pub fn long_tail_subsample(data: &Dataset, gamma: f64, rng: &mut dyn RngCore) -> Result<Dataset> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma {gamma} outside (0, 1]"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes() as usize];
    for i in 0..data.len() {
        by_class[data.label(i) as usize].push(i);
    }
    let mut kept = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        let keep = (members.len() as f64 * gamma.powi(class as i32) + 1e-9).floor() as usize;
        if keep == 0 {
            return Err(Error::ClassEmptied(class));
        }
        let (chosen, _) = members.partial_shuffle(rng, keep);
        kept.extend_from_slice(chosen);
    }
    kept.sort_unstable();
    Ok(data.subset(&kept))
}

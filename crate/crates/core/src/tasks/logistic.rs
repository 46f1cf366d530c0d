use rand::{Rng, RngCore};

use super::{Dataset, Task};
use crate::attacks::attack_label_flip;
use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Multinomial logistic regression, one data shard per good worker.
///
/// Parameters are laid out class by class: `p` weights followed by a bias, so
/// `dim = classes · (p + 1)`. Worker losses are softmax cross-entropy plus
/// `l2/2 · ‖x‖²`.
#[derive(Clone, Debug)]
pub struct LogisticTask {
    shards: Vec<Dataset>,
    pooled: Dataset,
    test: Dataset,
    classes: usize,
    features: usize,
    l2: f64,
    batch: Option<usize>,
}

/// `batch = None` makes stochastic gradients use the whole shard. The test split
/// defaults to the pooled training data.
pub fn make_logistic_task(
    shards: Vec<Dataset>,
    l2: f64,
    batch: Option<usize>,
    test: Option<Dataset>,
) -> Result<LogisticTask> {
    let first = shards.first().ok_or(Error::EmptyInput)?;
    let (p, classes) = (first.feature_dim(), first.num_classes());
    for s in &shards {
        if s.is_empty() {
            return Err(Error::EmptyInput);
        }
        if s.feature_dim() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: s.feature_dim(),
            });
        }
    }
    if !(l2 >= 0.0) || batch == Some(0) {
        return Err(Error::InvalidParameter(
            "logistic task needs l2 >= 0 and batch >= 1".into(),
        ));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for s in &shards {
        for i in 0..s.len() {
            features.extend_from_slice(s.features(i));
            labels.push(s.label(i));
        }
    }
    let pooled = Dataset::new(features, labels, p, classes)?;
    let test = match test {
        Some(t) if t.feature_dim() != p => {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: t.feature_dim(),
            })
        }
        Some(t) if t.is_empty() => return Err(Error::EmptyInput),
        Some(t) => t,
        None => pooled.clone(),
    };
    Ok(LogisticTask {
        shards,
        pooled,
        test,
        classes: classes as usize,
        features: p,
        l2,
        batch,
    })
}

impl LogisticTask {
    pub fn shards(&self) -> &[Dataset] {
        &self.shards
    }

    fn logits(&self, x: &[f64], a: &[f64], out: &mut [f64]) {
        let w = self.features + 1;
        for (c, o) in out.iter_mut().enumerate() {
            let row = &x[c * w..(c + 1) * w];
            *o = row[..self.features]
                .iter()
                .zip(a)
                .map(|(u, v)| u * v)
                .sum::<f64>()
                + row[self.features];
        }
    }

    /// Cross-entropy of one sample; leaves the softmax probabilities in `buf`.
    fn sample_loss(&self, x: &[f64], a: &[f64], y: usize, buf: &mut [f64]) -> f64 {
        self.logits(x, a, buf);
        let max = buf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in buf.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        let loss = z.ln() - (buf[y].ln());
        buf.iter_mut().for_each(|v| *v /= z);
        loss
    }

    fn accumulate_grad(&self, x: &[f64], a: &[f64], y: usize, buf: &mut [f64], g: &mut [f64]) {
        self.sample_loss(x, a, y, buf);
        let w = self.features + 1;
        for c in 0..self.classes {
            let dz = buf[c] - if c == y { 1.0 } else { 0.0 };
            let row = &mut g[c * w..(c + 1) * w];
            for (gi, ai) in row[..self.features].iter_mut().zip(a) {
                *gi += dz * ai;
            }
            row[self.features] += dz;
        }
    }

    fn finish(&self, x: &[f64], mut g: Vec<f64>, count: usize) -> ParamVector {
        let inv = 1.0 / count as f64;
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi = *gi * inv + self.l2 * xi;
        }
        ParamVector::from_untrusted(g)
    }

    fn regularizer(&self, x: &[f64]) -> f64 {
        0.5 * self.l2 * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn data_loss(&self, data: &Dataset, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.classes];
        (0..data.len())
            .map(|i| self.sample_loss(x, data.features(i), data.label(i) as usize, &mut buf))
            .sum::<f64>()
            / data.len() as f64
    }

    fn minibatch_grad(
        &self,
        data: &Dataset,
        x: &[f64],
        rng: &mut dyn RngCore,
        relabel: impl Fn(u32) -> u32,
    ) -> ParamVector {
        let mut buf = vec![0.0; self.classes];
        let mut g = vec![0.0; x.len()];
        let count = match self.batch {
            Some(b) => {
                for _ in 0..b {
                    let i = rng.random_range(0..data.len());
                    let y = relabel(data.label(i)) as usize;
                    self.accumulate_grad(x, data.features(i), y, &mut buf, &mut g);
                }
                b
            }
            None => {
                for i in 0..data.len() {
                    let y = relabel(data.label(i)) as usize;
                    self.accumulate_grad(x, data.features(i), y, &mut buf, &mut g);
                }
                data.len()
            }
        };
        self.finish(x, g, count)
    }

    pub fn worker_loss(&self, worker: usize, x: &ParamVector) -> f64 {
        self.data_loss(&self.shards[worker], x.as_slice()) + self.regularizer(x.as_slice())
    }
}

impl Task for LogisticTask {
    fn dim(&self) -> usize {
        self.classes * (self.features + 1)
    }

    fn num_workers(&self) -> usize {
        self.shards.len()
    }

    fn loss(&self, x: &ParamVector) -> f64 {
        let total: f64 = self
            .shards
            .iter()
            .map(|s| self.data_loss(s, x.as_slice()))
            .sum();
        total / self.shards.len() as f64 + self.regularizer(x.as_slice())
    }

    fn worker_full_gradient(&self, worker: usize, x: &ParamVector) -> ParamVector {
        let data = &self.shards[worker];
        let mut buf = vec![0.0; self.classes];
        let mut g = vec![0.0; x.dim()];
        for i in 0..data.len() {
            self.accumulate_grad(
                x.as_slice(),
                data.features(i),
                data.label(i) as usize,
                &mut buf,
                &mut g,
            );
        }
        self.finish(x.as_slice(), g, data.len())
    }

    fn worker_stoch_gradient(
        &self,
        worker: usize,
        x: &ParamVector,
        rng: &mut dyn RngCore,
    ) -> ParamVector {
        self.minibatch_grad(&self.shards[worker], x.as_slice(), rng, |y| y)
    }

    fn accuracy(&self, x: &ParamVector) -> Option<f64> {
        let mut buf = vec![0.0; self.classes];
        let correct = (0..self.test.len())
            .filter(|&i| {
                self.logits(x.as_slice(), self.test.features(i), &mut buf);
                let mut best = 0;
                for c in 1..self.classes {
                    if buf[c] > buf[best] {
                        best = c;
                    }
                }
                best as u32 == self.test.label(i)
            })
            .count();
        Some(correct as f64 / self.test.len() as f64)
    }

    fn flipped_label_gradient(
        &self,
        x: &ParamVector,
        rng: &mut dyn RngCore,
    ) -> Option<ParamVector> {
        let classes = self.classes as u32;
        Some(self.minibatch_grad(&self.pooled, x.as_slice(), rng, |y| {
            attack_label_flip(y, classes).unwrap_or(y)
        }))
    }
}

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig { lambda: 1e-4, epochs: 100, seed: 0 }
    }
}

/// One-vs-rest linear max-margin classifier fitted with Pegasos steps on
/// standardized features plus a bias column.
#[derive(Clone, Debug)]
pub struct LinearClassifier {
    classes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl LinearClassifier {
    pub fn fit(x: &Matrix, labels: &[usize], config: LinearConfig) -> Result<Self> {
        let n = x.rows();
        if n == 0 || n != labels.len() {
            return Err(Error::contract(format!("{n} feature rows for {} labels", labels.len())));
        }
        if !(config.lambda > 0.0) {
            return Err(Error::config("regularization must be positive"));
        }
        let classes: Vec<usize> = labels.iter().copied().collect::<alloc::collections::BTreeSet<_>>().into_iter().collect();
        if classes.len() < 2 {
            return Err(Error::Degenerate(format!("training set has {} class", classes.len())));
        }
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v / n as f64;
            }
        }
        let mut scale = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in scale.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { 1.0 / libm::sqrt(*s) } else { 1.0 };
        }
        let mut clf = LinearClassifier { classes, weights: Vec::new(), mean, scale };
        let feats: Vec<Vec<f64>> = (0..n).map(|i| clf.features(x.row(i))).collect();
        let radius = 1.0 / libm::sqrt(config.lambda);
        let class_of: BTreeMap<usize, usize> = clf.classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let targets: Vec<usize> = labels.iter().map(|l| class_of[l]).collect();
        let mut weights = vec![vec![0.0; d + 1]; clf.classes.len()];
        let mut t = 0u64;
        for epoch in 0..config.epochs {
            let mut r = rng::stream(config.seed, rng::PURPOSE_EVAL, epoch as u64 + 1);
            for i in rng::permutation(n, &mut r) {
                t += 1;
                let eta = 1.0 / (config.lambda * t as f64);
                let shrink = 1.0 - eta * config.lambda;
                for (c, w) in weights.iter_mut().enumerate() {
                    let y = if targets[i] == c { 1.0 } else { -1.0 };
                    let margin = y * dot(w, &feats[i]);
                    for v in w.iter_mut() {
                        *v *= shrink;
                    }
                    if margin < 1.0 {
                        for (v, f) in w.iter_mut().zip(&feats[i]) {
                            *v += eta * y * f;
                        }
                    }
                    let norm = libm::sqrt(dot(w, w));
                    if norm > radius {
                        let s = radius / norm;
                        for v in w.iter_mut() {
                            *v *= s;
                        }
                    }
                }
            }
        }
        clf.weights = weights;
        Ok(clf)
    }

    fn features(&self, row: &[f64]) -> Vec<f64> {
        let mut f: Vec<f64> = row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s).collect();
        f.push(1.0);
        f
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Class with the highest one-vs-rest score (ties by lower class).
    pub fn predict(&self, row: &[f64]) -> usize {
        let f = self.features(row);
        let mut best = (0, f64::NEG_INFINITY);
        for (c, w) in self.weights.iter().enumerate() {
            let s = dot(w, &f);
            if s > best.1 {
                best = (c, s);
            }
        }
        self.classes[best.0]
    }

    pub fn accuracy(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        if x.rows() == 0 || x.rows() != labels.len() {
            return Err(Error::contract(format!("{} feature rows for {} labels", x.rows(), labels.len())));
        }
        let hits = (0..x.rows()).filter(|&i| self.predict(x.row(i)) == labels[i]).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

/// Test accuracy of a [`LinearClassifier`] fitted on the training split.
pub fn classify_linear(
    train: &Matrix,
    train_labels: &[usize],
    test: &Matrix,
    test_labels: &[usize],
    config: LinearConfig,
) -> Result<f64> {
    LinearClassifier::fit(train, train_labels, config)?.accuracy(test, test_labels)
}

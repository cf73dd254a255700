//! Precision-recall evaluation and the supervised baselines.
//!
//! Curves sweep thresholds over the distinct scores in descending order.
//! Tied scores enter the confusion counts together, and the curve starts at
//! an anchor `(recall 0, precision of the first threshold)`. Area is the
//! trapezoidal integral of precision over recall.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::math::{self, sigmoid, softplus};
use crate::numerics::{AdamConfig, ParamStore, Tensor};
use crate::ssgan::{loss_labeled, Discriminator, GanTrainConfig, NEGATIVE, POSITIVE};
use crate::{derive_seed, rng_from_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Scores `>= threshold` are predicted positive. The anchor uses `+inf`.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    /// Fraction of positive labels.
    pub prevalence: f64,
}

impl PrCurve {
    pub fn auc(&self) -> f64 {
        pr_auc(self)
    }
}

fn check_binary(labels: &[bool], what: &'static str) -> Result<usize> {
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass(what));
    }
    Ok(positives)
}

pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    if scores.len() != labels.len() {
        return Err(Error::dim("pr_curve", scores.len(), labels.len()));
    }
    let positives = check_binary(labels, "pr_curve labels")?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("pr_curve scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let p = positives as f64;
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            recall: tp as f64 / p,
            precision: tp as f64 / (tp + fp) as f64,
            threshold,
        });
    }
    points.insert(
        0,
        PrPoint {
            recall: 0.0,
            precision: points[0].precision,
            threshold: f64::INFINITY,
        },
    );
    Ok(PrCurve {
        points,
        prevalence: p / labels.len() as f64,
    })
}

pub fn pr_auc(curve: &PrCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * (w[0].precision + w[1].precision) / 2.0)
        .sum()
}

/// Convenience: `pr_auc(pr_curve(scores, labels))`.
pub fn pr_auc_of(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(pr_auc(&pr_curve(scores, labels)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 0.01,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn score_row(&self, x: &[f64]) -> f64 {
        sigmoid(math::dot(&self.weights, x) + self.bias)
    }

    pub fn scores(&self, features: &Tensor) -> Result<Vec<f64>> {
        let (n, d) = features.dims2()?;
        if d != self.weights.len() {
            return Err(Error::dim("LogisticModel::scores", self.weights.len(), d));
        }
        Ok((0..n).map(|r| self.score_row(features.row(r))).collect())
    }
}

/// Mean binary cross-entropy of `sigmoid(x·w + b)` and its gradient, laid
/// out as `[dw..., db]`.
pub fn logistic_loss(model: &LogisticModel, x: &Tensor, y: &[bool]) -> Result<(f64, Vec<f64>)> {
    let (n, d) = x.dims2()?;
    if n == 0 {
        return Err(Error::Empty("logistic batch"));
    }
    if y.len() != n || d != model.weights.len() {
        return Err(Error::dim("logistic_loss", alloc::format!("{n} labels, width {}", model.weights.len()), alloc::format!("{} labels, width {d}", y.len())));
    }
    let mut grad = vec![0.0; d + 1];
    let mut loss = 0.0;
    for (r, &yr) in y.iter().enumerate() {
        let t = if yr { 1.0 } else { 0.0 };
        let xr = x.row(r);
        let z = math::dot(&model.weights, xr) + model.bias;
        loss += softplus(z) - t * z;
        let dz = (sigmoid(z) - t) / n as f64;
        for (g, &xi) in grad.iter_mut().zip(xr) {
            *g += dz * xi;
        }
        grad[d] += dz;
    }
    Ok((loss / n as f64, grad))
}

#[derive(Debug, Clone)]
pub struct LogisticRun {
    pub model: LogisticModel,
    pub epoch_losses: Vec<f64>,
}

/// Minibatch Adam on binary cross-entropy, zero-initialized.
pub fn train_logistic_baseline(features: &Tensor, labels: &[bool], cfg: &LogisticConfig) -> Result<LogisticRun> {
    let (n, d) = features.dims2()?;
    if labels.len() != n {
        return Err(Error::dim("train_logistic_baseline", n, labels.len()));
    }
    check_binary(labels, "logistic baseline labels")?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("logistic batch_size must be >= 1".into()));
    }
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    adam.validate()?;
    let mut store = ParamStore::new();
    let w = store.add("lr.w", Tensor::zeros(&[d]))?;
    let b = store.add("lr.b", Tensor::zeros(&[1]))?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 20));
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let model = LogisticModel {
                weights: store.value(w).data().to_vec(),
                bias: store.value(b).data()[0],
            };
            let ys: Vec<bool> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = logistic_loss(&model, &features.select_rows(chunk), &ys)?;
            total += loss * chunk.len() as f64;
            store.accumulate(w, &Tensor::vector(grad[..d].to_vec()))?;
            store.accumulate(b, &Tensor::vector(vec![grad[d]]))?;
            store.adam_step(&adam)?;
        }
        epoch_losses.push(total / n as f64);
    }
    Ok(LogisticRun {
        model: LogisticModel {
            weights: store.value(w).data().to_vec(),
            bias: store.value(b).data()[0],
        },
        epoch_losses,
    })
}

/// Supervised baseline with the discriminator's architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnnConfig {
    /// Passes over the labeled set.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for DnnConfig {
    fn default() -> Self {
        DnnConfig::matching(&GanTrainConfig::default(), 100)
    }
}

impl DnnConfig {
    /// Same layers, dropout, batch size and optimizer as the GAN's
    /// discriminator.
    pub fn matching(gan: &GanTrainConfig, epochs: usize) -> Self {
        DnnConfig {
            epochs,
            batch_size: gan.batch_size,
            learning_rate: gan.learning_rate,
            dropout: gan.dropout,
            hidden: gan.disc_hidden.clone(),
            leaky_slope: gan.leaky_slope,
            seed: gan.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DnnRun {
    pub model: Discriminator,
    pub epoch_losses: Vec<f64>,
}

/// Trains a [`Discriminator`] on labeled data with the labeled
/// cross-entropy only. Score it with [`Discriminator::scores`].
pub fn train_dnn_baseline(features: &Tensor, labels: &[bool], cfg: &DnnConfig) -> Result<DnnRun> {
    let (n, d) = features.dims2()?;
    if labels.len() != n {
        return Err(Error::dim("train_dnn_baseline", n, labels.len()));
    }
    check_binary(labels, "DNN baseline labels")?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("DNN batch_size must be >= 1".into()));
    }
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    adam.validate()?;
    // Same init stream as the GAN discriminator for a given seed.
    let mut init_rng = rng_from_seed(derive_seed(cfg.seed, 10));
    let mut model = Discriminator::new(d, &cfg.hidden, cfg.dropout, cfg.leaky_slope, &mut init_rng)?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 21));
    let classes: Vec<usize> = labels.iter().map(|&y| if y { POSITIVE } else { NEGATIVE }).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = features.select_rows(chunk);
            let ys: Vec<usize> = chunk.iter().map(|&i| classes[i]).collect();
            let trace = model.forward(&x, Some(&mut rng))?;
            let loss = loss_labeled(&trace.output, &ys)?;
            model.backward(&trace, &loss.grad)?;
            model.parameters_mut().adam_step(&adam)?;
            total += loss.value * chunk.len() as f64;
        }
        epoch_losses.push(total / n as f64);
    }
    Ok(DnnRun { model, epoch_losses })
}

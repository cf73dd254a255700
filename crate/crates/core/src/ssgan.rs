//! Semi-supervised GAN over patient feature vectors.
//!
//! The discriminator emits `K` real-class logits `l_1..l_K` and models the
//! fake class implicitly with a fixed zero logit, so
//! `Z(x) = Σ_k exp(l_k)`, `p(fake | x) = 1/(Z+1)` and `D(x) = Z/(Z+1)`.
//! Class 0 is positive, class 1 negative.
//!
//! Discriminator loss: `L_labeled + L_unlabeled + L_fake + L_entropy`.
//! Generator loss: `L_FM + L_PT` (feature matching plus pull-away).
//!
//! Every loss function returns its value together with the gradient with
//! respect to its input, so the training loop is plain chained backprop.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math::{self, exp, log_sum_exp, softplus};
use crate::numerics::{Activation, AdamConfig, Mlp, MlpTrace, ParamStore, Tensor};
use crate::synthgen::Label;
use crate::{derive_seed, rng_from_seed, Error, Result, Rng};

/// Number of real classes.
pub const NUM_CLASSES: usize = 2;
pub const POSITIVE: usize = 0;
pub const NEGATIVE: usize = 1;

/// Maps a training label to its class index.
pub fn class_index(label: Label) -> Result<usize> {
    match label {
        Label::Positive => Ok(POSITIVE),
        Label::Negative => Ok(NEGATIVE),
        Label::Unlabeled => Err(Error::Config("unlabeled record where a class label is required".into())),
    }
}

/// Output of [`class_and_fake_probs`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFakeProbs {
    /// `p(class k, real | x) = exp(l_k)/(Z+1)`.
    pub class: Vec<f64>,
    /// `p(fake | x) = 1/(Z+1)`.
    pub fake: f64,
    /// `D(x) = Z/(Z+1)`, stored as `1 - fake`.
    pub real: f64,
}

/// `log(Z + 1)`: log-sum-exp of the logits with an appended zero.
fn lse_with_fake(logits: &[f64]) -> f64 {
    softplus(log_sum_exp(logits))
}

pub fn class_and_fake_probs(logits: &[f64]) -> ClassFakeProbs {
    let lz1 = lse_with_fake(logits);
    let fake = exp(-lz1);
    ClassFakeProbs {
        class: logits.iter().map(|&l| exp(l - lz1)).collect(),
        fake,
        real: 1.0 - fake,
    }
}

/// `p(k | x, real)`: softmax over the real-class logits only.
pub fn conditional_probs(logits: &[f64]) -> Vec<f64> {
    let lz = log_sum_exp(logits);
    logits.iter().map(|&l| exp(l - lz)).collect()
}

/// Joint probability of "positive and real", `exp(l_pos)/(Z+1)`.
pub fn positive_score(logits: &[f64]) -> f64 {
    exp(logits[POSITIVE] - lse_with_fake(logits))
}

/// A scalar loss and its gradient with respect to the loss input.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Tensor,
}

fn check_logits(logits: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    let (b, k) = logits.dims2()?;
    if b == 0 {
        return Err(Error::Empty(op));
    }
    if k < 2 {
        return Err(Error::dim(op, "at least 2 logits", k));
    }
    Ok((b, k))
}

/// Mean of `-log p(y | x, real)`: cross-entropy over the real classes.
pub fn loss_labeled(logits: &Tensor, labels: &[usize]) -> Result<LossGrad> {
    let (b, k) = check_logits(logits, "loss_labeled")?;
    if labels.len() != b {
        return Err(Error::dim("loss_labeled labels", b, labels.len()));
    }
    let mut grad = Tensor::zeros(&[b, k]);
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, classes: k });
        }
        let l = logits.row(r);
        let lz = log_sum_exp(l);
        total += lz - l[y];
        for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
            let q = exp(l[j] - lz);
            *g = (q - if j == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok(LossGrad { value: total / b as f64, grad })
}

/// Mean of `-log D(x) = log(Z+1) - log Z` on real unlabeled samples.
pub fn loss_unlabeled(logits: &Tensor) -> Result<LossGrad> {
    let (b, k) = check_logits(logits, "loss_unlabeled")?;
    let mut grad = Tensor::zeros(&[b, k]);
    let mut total = 0.0;
    for r in 0..b {
        let l = logits.row(r);
        let lz = log_sum_exp(l);
        let lz1 = softplus(lz);
        total += softplus(-lz);
        for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = (exp(l[j] - lz1) - exp(l[j] - lz)) / b as f64;
        }
    }
    Ok(LossGrad { value: total / b as f64, grad })
}

/// Mean of `-log p(fake | x) = log(Z+1)` on generated samples.
pub fn loss_fake(logits: &Tensor) -> Result<LossGrad> {
    let (b, k) = check_logits(logits, "loss_fake")?;
    let mut grad = Tensor::zeros(&[b, k]);
    let mut total = 0.0;
    for r in 0..b {
        let l = logits.row(r);
        let lz1 = lse_with_fake(l);
        total += lz1;
        for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = exp(l[j] - lz1) / b as f64;
        }
    }
    Ok(LossGrad { value: total / b as f64, grad })
}

/// Mean of `Σ_k q_k log q_k` with `q = p(· | x, real)`. This is the negative
/// conditional entropy, so it lies in `[-ln K, 0]`.
pub fn loss_entropy(logits: &Tensor) -> Result<LossGrad> {
    let (b, k) = check_logits(logits, "loss_entropy")?;
    let mut grad = Tensor::zeros(&[b, k]);
    let mut total = 0.0;
    for r in 0..b {
        let l = logits.row(r);
        let lz = log_sum_exp(l);
        let logq: Vec<f64> = l.iter().map(|&x| x - lz).collect();
        let q: Vec<f64> = logq.iter().map(|&x| exp(x)).collect();
        let neg_h: f64 = q.iter().zip(&logq).map(|(a, b)| a * b).sum();
        total += neg_h;
        for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = q[j] * (logq[j] - neg_h) / b as f64;
        }
    }
    Ok(LossGrad { value: total / b as f64, grad })
}

/// Feature-matching loss and its gradients with respect to both batches.
#[derive(Debug, Clone)]
pub struct FeatureMatching {
    pub value: f64,
    pub grad_fake: Tensor,
    pub grad_real: Tensor,
}

/// `‖mean f(fake) - mean f(real)‖²`.
pub fn loss_feature_matching(real: &Tensor, fake: &Tensor) -> Result<FeatureMatching> {
    let (nr, d) = real.dims2()?;
    let (nf, d2) = fake.dims2()?;
    if nr == 0 || nf == 0 {
        return Err(Error::Empty("feature matching batch"));
    }
    if d != d2 {
        return Err(Error::dim("loss_feature_matching", d, d2));
    }
    let diff: Vec<f64> = fake.mean_rows().iter().zip(real.mean_rows()).map(|(a, b)| a - b).collect();
    let value = math::dot(&diff, &diff);
    let mut grad_fake = Tensor::zeros(&[nf, d]);
    let mut grad_real = Tensor::zeros(&[nr, d]);
    for r in 0..nf {
        for (g, &x) in grad_fake.row_mut(r).iter_mut().zip(&diff) {
            *g = 2.0 * x / nf as f64;
        }
    }
    for r in 0..nr {
        for (g, &x) in grad_real.row_mut(r).iter_mut().zip(&diff) {
            *g = -2.0 * x / nr as f64;
        }
    }
    Ok(FeatureMatching {
        value,
        grad_fake,
        grad_real,
    })
}

/// Pull-away term: mean squared cosine similarity over ordered pairs `i ≠ j`.
pub fn loss_pull_away(features: &Tensor) -> Result<LossGrad> {
    let (n, d) = features.dims2()?;
    if n < 2 {
        return Err(Error::InsufficientData(format!("pull-away term needs at least 2 samples, got {n}")));
    }
    let mut unit = Tensor::zeros(&[n, d]);
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let norm = math::norm(features.row(i));
        if !(norm > 0.0) {
            return Err(Error::ZeroNorm(format!("generated feature row {i}")));
        }
        norms[i] = norm;
        for (u, &x) in unit.row_mut(i).iter_mut().zip(features.row(i)) {
            *u = x / norm;
        }
    }
    let sim = crate::numerics::matmul(&unit, false, &unit, true)?;
    let pairs = (n * (n - 1)) as f64;
    let mut value = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                value += sim.get(i, j) * sim.get(i, j);
            }
        }
    }
    value /= pairs;

    // dL/du_i = (4 / pairs) Σ_{j≠i} s_ij u_j, then project out the radial part.
    let mut s_off = sim.clone();
    for i in 0..n {
        s_off.set(i, i, 0.0);
    }
    let du = crate::numerics::matmul(&s_off, false, &unit, false)?;
    let mut grad = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let (u, g) = (unit.row(i), du.row(i));
        let radial = math::dot(u, g);
        let scale = 4.0 / pairs / norms[i];
        for ((out, &gi), &ui) in grad.row_mut(i).iter_mut().zip(g).zip(u) {
            *out = scale * (gi - radial * ui);
        }
    }
    Ok(LossGrad { value, grad })
}

/// Which way the conditional-entropy term enters the discriminator loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySign {
    /// `+ mean Σ q log q`.
    #[default]
    AsWritten,
    /// `- mean Σ q log q`, i.e. minimizes the conditional entropy.
    Flipped,
}

impl EntropySign {
    fn factor(self) -> f64 {
        match self {
            EntropySign::AsWritten => 1.0,
            EntropySign::Flipped => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Dropout after each discriminator hidden layer.
    pub dropout: f64,
    pub noise_dim: usize,
    pub disc_hidden: Vec<usize>,
    pub gen_hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub entropy: EntropySign,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            batch_size: 128,
            epochs: 20,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            dropout: 0.3,
            noise_dim: 100,
            disc_hidden: vec![256, 128, 64, 32, 16],
            gen_hidden: vec![16, 32, 64, 128, 256],
            leaky_slope: 0.2,
            entropy: EntropySign::AsWritten,
            seed: 42,
        }
    }
}

impl GanTrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("GAN batch_size must be >= 2 for the pull-away term".into()));
        }
        if self.noise_dim == 0 || self.disc_hidden.is_empty() || self.gen_hidden.is_empty() {
            return Err(Error::Config("GAN noise_dim and hidden widths must be non-empty".into()));
        }
        if self.disc_hidden.iter().chain(&self.gen_hidden).any(|&w| w == 0) {
            return Err(Error::Config("GAN hidden widths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.adam().validate()
    }
}

/// K-logit classifier over feature vectors. Also serves as the supervised
/// DNN baseline.
#[derive(Debug, Clone)]
pub struct Discriminator {
    net: Mlp,
    store: ParamStore,
}

impl Discriminator {
    pub fn new(feature_dim: usize, hidden: &[usize], dropout: f64, leaky_slope: f64, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Mlp::new(
            &mut store,
            "disc",
            feature_dim,
            hidden,
            NUM_CLASSES,
            Activation::LeakyRelu(leaky_slope),
            Activation::Identity,
            dropout,
            rng,
        )?;
        Ok(Discriminator { net, store })
    }

    pub fn feature_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn parameters(&self) -> &ParamStore {
        &self.store
    }

    pub fn parameters_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Forward pass; dropout is on only when `rng` is given.
    pub fn forward(&self, x: &Tensor, rng: Option<&mut Rng>) -> Result<MlpTrace> {
        self.net.forward(&self.store, x, rng)
    }

    /// Inference logits (dropout off).
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, None)?.output)
    }

    /// `exp(l_pos)/(Z+1)` for each row.
    pub fn scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows()).map(|r| positive_score(logits.row(r))).collect())
    }

    /// Backprop `d_logits` into the discriminator's own gradients.
    pub fn backward(&mut self, trace: &MlpTrace, d_logits: &Tensor) -> Result<()> {
        self.net.backward(trace, Some(d_logits), None, Some(&mut self.store))?;
        Ok(())
    }
}

/// Noise-to-feature network with a tanh output.
#[derive(Debug, Clone)]
pub struct Generator {
    net: Mlp,
    store: ParamStore,
}

impl Generator {
    pub fn new(noise_dim: usize, hidden: &[usize], feature_dim: usize, leaky_slope: f64, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Mlp::new(
            &mut store,
            "gen",
            noise_dim,
            hidden,
            feature_dim,
            Activation::LeakyRelu(leaky_slope),
            Activation::Tanh,
            0.0,
            rng,
        )?;
        Ok(Generator { net, store })
    }

    pub fn noise_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn parameters(&self) -> &ParamStore {
        &self.store
    }

    pub fn parameters_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Standard normal noise, `n × d_z`.
    pub fn noise(&self, n: usize, rng: &mut Rng) -> Tensor {
        let data = (0..n * self.noise_dim())
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        Tensor::new(vec![n, self.noise_dim()], data).expect("noise shape")
    }

    pub fn forward(&self, z: &Tensor) -> Result<MlpTrace> {
        self.net.forward(&self.store, z, None)
    }

    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.forward(z)?.output)
    }
}

/// Loss components of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub labeled: f64,
    pub unlabeled: f64,
    pub fake: f64,
    pub entropy: f64,
    pub feature_matching: f64,
    pub pull_away: f64,
    pub d_total: f64,
    pub g_total: f64,
}

impl LossBreakdown {
    fn is_finite(&self) -> bool {
        [
            self.labeled,
            self.unlabeled,
            self.fake,
            self.entropy,
            self.feature_matching,
            self.pull_away,
            self.d_total,
            self.g_total,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub losses: LossBreakdown,
}

/// Discriminator-side losses of one step.
#[derive(Debug, Clone, Copy)]
pub struct DiscLosses {
    pub labeled: f64,
    pub unlabeled: f64,
    pub fake: f64,
    pub entropy: f64,
}

/// Generator-side losses of one step.
#[derive(Debug, Clone, Copy)]
pub struct GenLosses {
    pub feature_matching: f64,
    pub pull_away: f64,
}

/// Trained semi-supervised GAN.
#[derive(Debug, Clone)]
pub struct GanModel {
    config: GanTrainConfig,
    pub disc: Discriminator,
    pub gen: Generator,
}

impl GanModel {
    /// Freshly initialized networks for `feature_dim`-wide inputs.
    pub fn new(feature_dim: usize, cfg: &GanTrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(derive_seed(cfg.seed, 10));
        let disc = Discriminator::new(feature_dim, &cfg.disc_hidden, cfg.dropout, cfg.leaky_slope, &mut rng)?;
        let gen = Generator::new(cfg.noise_dim, &cfg.gen_hidden, feature_dim, cfg.leaky_slope, &mut rng)?;
        Ok(GanModel {
            config: cfg.clone(),
            disc,
            gen,
        })
    }

    pub fn config(&self) -> &GanTrainConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.disc.feature_dim()
    }

    /// All parameters, discriminator first, under their `disc.*` / `gen.*` names.
    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = self.disc.store.named_tensors();
        out.extend(self.gen.store.named_tensors());
        out
    }

    /// Rebuilds a model from [`GanModel::parameters`] output.
    pub fn from_parameters(feature_dim: usize, cfg: &GanTrainConfig, params: &[(String, Tensor)]) -> Result<Self> {
        let mut model = GanModel::new(feature_dim, cfg)?;
        let (d, g): (Vec<_>, Vec<_>) = params.iter().cloned().partition(|(n, _)| n.starts_with("disc."));
        model.disc.store.load_named(&d)?;
        model.gen.store.load_named(&g)?;
        Ok(model)
    }

    /// Positive-class scores with dropout off.
    pub fn predict_scores(&self, features: &Tensor) -> Result<Vec<f64>> {
        self.disc.scores(features)
    }

    /// Discriminator losses on one step's batches, with gradients
    /// accumulated into the discriminator. Dropout is on when `rng` is given.
    pub fn discriminator_pass(
        &mut self,
        labeled: &Tensor,
        labels: &[usize],
        unlabeled: &Tensor,
        fake: &Tensor,
        rng: Option<&mut Rng>,
    ) -> Result<DiscLosses> {
        let (nl, nu) = (labeled.rows(), unlabeled.rows());
        let x = Tensor::vstack(&[labeled, unlabeled, fake])?;
        let trace = self.disc.forward(&x, rng)?;
        let logits = &trace.output;
        let l_lab = loss_labeled(&logits.slice_rows(0, nl), labels)?;
        let l_unl_logits = logits.slice_rows(nl, nl + nu);
        let l_unl = loss_unlabeled(&l_unl_logits)?;
        let l_ent = loss_entropy(&l_unl_logits)?;
        let l_fake = loss_fake(&logits.slice_rows(nl + nu, logits.rows()))?;
        let sign = self.config.entropy.factor();
        let mut d_unl = l_unl.grad;
        d_unl.add_scaled(&l_ent.grad, sign)?;
        let d_logits = Tensor::vstack(&[&l_lab.grad, &d_unl, &l_fake.grad])?;
        self.disc.backward(&trace, &d_logits)?;
        Ok(DiscLosses {
            labeled: l_lab.value,
            unlabeled: l_unl.value,
            fake: l_fake.value,
            entropy: sign * l_ent.value,
        })
    }

    /// Generator losses for noise `z` against a real unlabeled batch, with
    /// gradients accumulated into the generator only. The discriminator
    /// runs in training mode when `rng` is given.
    pub fn generator_pass(&mut self, z: &Tensor, unlabeled: &Tensor, rng: Option<&mut Rng>) -> Result<GenLosses> {
        let g_trace = self.gen.forward(z)?;
        let nu = unlabeled.rows();
        let x = Tensor::vstack(&[unlabeled, &g_trace.output])?;
        let d_trace = self.disc.forward(&x, rng)?;
        let feats = d_trace.features();
        let (real_f, fake_f) = (feats.slice_rows(0, nu), feats.slice_rows(nu, feats.rows()));
        let fm = loss_feature_matching(&real_f, &fake_f)?;
        let pt = loss_pull_away(&fake_f)?;
        let mut d_fake = fm.grad_fake;
        d_fake.add_scaled(&pt.grad, 1.0)?;
        let d_feats = Tensor::vstack(&[&Tensor::zeros(&[nu, feats.cols()]), &d_fake])?;
        let dx = self.disc.net.backward(&d_trace, None, Some(&d_feats), None)?;
        let d_gen_out = dx.slice_rows(nu, dx.rows());
        self.gen.net.backward(&g_trace, Some(&d_gen_out), None, Some(&mut self.gen.store))?;
        Ok(GenLosses {
            feature_matching: fm.value,
            pull_away: pt.value,
        })
    }
}

/// Result of [`train_gan`].
#[derive(Debug, Clone)]
pub struct GanTraining {
    pub model: GanModel,
    pub history: Vec<StepRecord>,
}

/// Training data for [`train_gan`].
pub struct GanData<'a> {
    pub labeled: &'a Tensor,
    pub labels: &'a [usize],
    pub unlabeled: &'a Tensor,
}

/// Trains D and G alternately, one Adam step each per minibatch. An epoch is
/// one pass over the unlabeled set; labeled batches cycle through a
/// reshuffled permutation of the labeled set.
pub fn train_gan(data: &GanData<'_>, cfg: &GanTrainConfig) -> Result<GanTraining> {
    cfg.validate()?;
    let (nl, dim) = data.labeled.dims2()?;
    let (nu, dim_u) = data.unlabeled.dims2()?;
    if dim != dim_u {
        return Err(Error::dim("train_gan unlabeled width", dim, dim_u));
    }
    if data.labels.len() != nl {
        return Err(Error::dim("train_gan labels", nl, data.labels.len()));
    }
    for c in 0..NUM_CLASSES {
        if !data.labels.contains(&c) {
            return Err(Error::SingleClass("GAN labeled set"));
        }
    }
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= NUM_CLASSES) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: NUM_CLASSES,
        });
    }
    let b = cfg.batch_size;
    if nu < b {
        return Err(Error::InsufficientData(format!("{nu} unlabeled examples, batch size {b}")));
    }

    let mut model = GanModel::new(dim, cfg)?;
    let adam = cfg.adam();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 11));
    let mut lab_order: Vec<usize> = (0..nl).collect();
    let mut lab_pos = nl;
    let mut unl_order: Vec<usize> = (0..nu).collect();
    let steps_per_epoch = nu / b;
    let mut history = Vec::with_capacity(cfg.epochs * steps_per_epoch);

    for epoch in 0..cfg.epochs {
        unl_order.shuffle(&mut rng);
        for step in 0..steps_per_epoch {
            let mut lab_idx = Vec::with_capacity(b);
            while lab_idx.len() < b {
                if lab_pos == nl {
                    lab_order.shuffle(&mut rng);
                    lab_pos = 0;
                }
                lab_idx.push(lab_order[lab_pos]);
                lab_pos += 1;
            }
            let labeled = data.labeled.select_rows(&lab_idx);
            let labels: Vec<usize> = lab_idx.iter().map(|&i| data.labels[i]).collect();
            let unlabeled = data.unlabeled.select_rows(&unl_order[step * b..(step + 1) * b]);

            let z = model.gen.noise(b, &mut rng);
            let fake = model.gen.generate(&z)?;
            let d = model.discriminator_pass(&labeled, &labels, &unlabeled, &fake, Some(&mut rng))?;
            let diverged = |what: &str| Error::Diverged {
                epoch,
                step,
                what: what.into(),
            };
            model.disc.store.adam_step(&adam).map_err(|_| diverged("discriminator update"))?;

            let z = model.gen.noise(b, &mut rng);
            let g = model.generator_pass(&z, &unlabeled, Some(&mut rng))?;
            model.gen.store.adam_step(&adam).map_err(|_| diverged("generator update"))?;

            let losses = LossBreakdown {
                labeled: d.labeled,
                unlabeled: d.unlabeled,
                fake: d.fake,
                entropy: d.entropy,
                feature_matching: g.feature_matching,
                pull_away: g.pull_away,
                d_total: d.labeled + d.unlabeled + d.fake + d.entropy,
                g_total: g.feature_matching + g.pull_away,
            };
            if !losses.is_finite() {
                return Err(diverged("non-finite loss"));
            }
            history.push(StepRecord { epoch, step, losses });
        }
    }
    Ok(GanTraining { model, history })
}

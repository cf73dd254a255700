//! In-memory stage functions. The commands wrap these with artifact I/O;
//! `run_in_memory` chains them without touching disk.

use std::collections::BTreeMap;

use anyhow::{ensure, Result};
use raregan_core::embedder::{train_skipgram, SkipGramRun};
use raregan_core::encoder::EncoderTraining;
use raregan_core::eval::{pr_auc_of, train_dnn_baseline, train_logistic_baseline, DnnRun, LogisticRun};
use raregan_core::numerics::Tensor;
use raregan_core::ssgan::{class_index, train_gan, GanData, GanTraining};
use raregan_core::synthgen::{generate_cohort, split_cohort, CodeUniverse, CohortSplit};
use raregan_core::{EmbeddingMatrix, FeatureEncoder, FeatureScaler, Label, MedicalCode, PatientRecord, Vocabulary};

use crate::config::PipelineConfig;

/// Model names in report order.
pub const MODELS: [&str; 3] = ["sgan", "dnn", "lr"];

pub fn gen_data(cfg: &PipelineConfig) -> Result<(CohortSplit, BTreeMap<MedicalCode, usize>)> {
    let cohort = generate_cohort(&cfg.cohort)?;
    let split = split_cohort(&cohort, &cfg.split)?;
    let groups = CodeUniverse::new(&cfg.cohort)?.code_groups();
    Ok((split, groups))
}

/// Vocabulary over every sequence; labels are never read.
pub fn build_vocab(cfg: &PipelineConfig, train: &[PatientRecord], test: &[PatientRecord]) -> Result<Vocabulary> {
    let seqs = train.iter().chain(test).map(|r| r.codes.as_slice());
    Ok(Vocabulary::from_sequences(seqs, cfg.vocab.min_count)?)
}

pub fn train_embedding(
    cfg: &PipelineConfig,
    vocab: &Vocabulary,
    train: &[PatientRecord],
    test: &[PatientRecord],
) -> Result<SkipGramRun> {
    let all: Vec<PatientRecord> = train.iter().chain(test).cloned().collect();
    Ok(train_skipgram(&all, vocab, &cfg.skipgram)?)
}

pub fn train_encoder(
    cfg: &PipelineConfig,
    train: &[PatientRecord],
    emb: &EmbeddingMatrix,
    vocab: &Vocabulary,
) -> Result<EncoderTraining> {
    Ok(FeatureEncoder::train(train, emb, vocab, &cfg.encoder)?)
}

/// Scaled feature rows with the identifying columns kept alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub patient_ids: Vec<String>,
    pub labels: Vec<Label>,
    pub x: Tensor,
}

impl FeatureSet {
    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    fn indices(&self, keep: impl Fn(Label) -> bool) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| keep(self.labels[i])).collect()
    }

    /// Labeled rows and their positive flags.
    pub fn labeled(&self) -> (Tensor, Vec<bool>) {
        let idx = self.indices(|l| l != Label::Unlabeled);
        let y = idx.iter().map(|&i| self.labels[i] == Label::Positive).collect();
        (self.x.select_rows(&idx), y)
    }

    pub fn unlabeled(&self) -> Tensor {
        self.x.select_rows(&self.indices(|l| l == Label::Unlabeled))
    }

    pub fn positives(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l == Label::Positive).collect()
    }
}

pub struct EncodedFeatures {
    pub scaler: FeatureScaler,
    pub train: FeatureSet,
    pub test: FeatureSet,
}

/// Encodes both splits; the scaler is fit on the training split only.
pub fn encode_features(
    encoder: &FeatureEncoder,
    emb: &EmbeddingMatrix,
    vocab: &Vocabulary,
    train: &[PatientRecord],
    test: &[PatientRecord],
) -> Result<EncodedFeatures> {
    let raw_train = encoder.raw_features(train, emb, vocab)?;
    let scaler = FeatureScaler::fit(&raw_train)?;
    let set = |records: &[PatientRecord], raw: &Tensor| -> Result<FeatureSet> {
        Ok(FeatureSet {
            patient_ids: records.iter().map(|r| r.patient_id.clone()).collect(),
            labels: records.iter().map(|r| r.label).collect(),
            x: scaler.transform(raw)?,
        })
    };
    let train_set = set(train, &raw_train)?;
    let test_set = set(test, &encoder.raw_features(test, emb, vocab)?)?;
    Ok(EncodedFeatures {
        scaler,
        train: train_set,
        test: test_set,
    })
}

pub fn run_gan(cfg: &PipelineConfig, train: &FeatureSet) -> Result<GanTraining> {
    let (xl, yl) = train.labeled();
    let labels = yl
        .iter()
        .map(|&p| class_index(if p { Label::Positive } else { Label::Negative }))
        .collect::<Result<Vec<_>, _>>()?;
    let xu = train.unlabeled();
    Ok(train_gan(
        &GanData {
            labeled: &xl,
            labels: &labels,
            unlabeled: &xu,
        },
        &cfg.gan,
    )?)
}

pub fn run_logistic(cfg: &PipelineConfig, train: &FeatureSet) -> Result<LogisticRun> {
    let (xl, yl) = train.labeled();
    Ok(train_logistic_baseline(&xl, &yl, &cfg.logistic)?)
}

pub fn run_dnn(cfg: &PipelineConfig, train: &FeatureSet) -> Result<DnnRun> {
    let (xl, yl) = train.labeled();
    Ok(train_dnn_baseline(&xl, &yl, &cfg.dnn)?)
}

/// Test-set evaluation inputs: only rows with a known label count.
pub fn test_labels(test: &FeatureSet) -> Result<(Tensor, Vec<bool>)> {
    let (x, y) = test.labeled();
    ensure!(y.iter().any(|&p| p), "test split has no positives");
    Ok((x, y))
}

pub fn prevalence(labels: &[bool]) -> f64 {
    labels.iter().filter(|&&p| p).count() as f64 / labels.len() as f64
}

/// Everything an end-to-end run produces that the checks look at.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub prevalence: f64,
    /// PR-AUC keyed by model name.
    pub pr_auc: BTreeMap<String, f64>,
    pub n_test: usize,
    pub n_test_positive: usize,
}

pub fn run_in_memory(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let (split, _) = gen_data(cfg)?;
    let vocab = build_vocab(cfg, &split.train, &split.test)?;
    let emb = train_embedding(cfg, &vocab, &split.train, &split.test)?.embedding;
    let enc = train_encoder(cfg, &split.train, &emb, &vocab)?.encoder;
    let feats = encode_features(&enc, &emb, &vocab, &split.train, &split.test)?;
    let (xt, yt) = test_labels(&feats.test)?;

    let mut pr_auc = BTreeMap::new();
    let gan = run_gan(cfg, &feats.train)?;
    pr_auc.insert("sgan".to_string(), pr_auc_of(&gan.model.predict_scores(&xt)?, &yt)?);
    let dnn = run_dnn(cfg, &feats.train)?;
    pr_auc.insert("dnn".to_string(), pr_auc_of(&dnn.model.scores(&xt)?, &yt)?);
    let lr = run_logistic(cfg, &feats.train)?;
    pr_auc.insert("lr".to_string(), pr_auc_of(&lr.model.scores(&xt)?, &yt)?);

    Ok(RunSummary {
        prevalence: prevalence(&yt),
        pr_auc,
        n_test: yt.len(),
        n_test_positive: yt.iter().filter(|&&p| p).count(),
    })
}

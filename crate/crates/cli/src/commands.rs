//! One function per CLI command. Each checks its prerequisites, runs a
//! single stage, then writes its outputs, stamp and manifest line.

use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use raregan_core::derive_seed;
use raregan_core::eval::{pr_curve, DnnConfig, LogisticConfig, LogisticModel};
use raregan_core::numerics::Tensor;
use raregan_core::ssgan::{Discriminator, GanModel};
use raregan_core::synthgen::CohortSplit;
use raregan_core::{EncoderConfig, FeatureEncoder, FeatureScaler, GanTrainConfig, MedicalCode, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::config::{PipelineConfig, Stage};
use crate::pipeline::{self, FeatureSet, MODELS};

pub struct RunContext {
    pub cfg: PipelineConfig,
    pub art: Artifacts,
}

impl RunContext {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let art = Artifacts::new(cfg.out_dir.clone());
        Ok(RunContext { cfg, art })
    }

    fn finish(&self, stage: Stage, started: Instant, outputs: &[&str], epoch_losses: Vec<f64>) -> Result<()> {
        let config_hash = self.cfg.stage_hash(stage);
        self.art.write_stamp(
            &Stamp {
                stage: stage.name().to_string(),
                config_hash: config_hash.clone(),
                seed: self.cfg.seed,
                outputs: outputs.iter().map(|s| s.to_string()).collect(),
                epoch_losses,
            },
            stage,
        )?;
        let wall_time_s = started.elapsed().as_secs_f64();
        self.art.append_manifest(&ManifestLine {
            stage: stage.name().to_string(),
            config_hash,
            seed: self.cfg.seed,
            wall_time_s,
        })?;
        eprintln!("{}: done in {wall_time_s:.1}s", stage.name());
        Ok(())
    }

    fn split(&self) -> Result<CohortSplit> {
        self.art.require(&self.cfg, Stage::Data)?;
        Ok(CohortSplit {
            train: read_records(&self.art.path(TRAIN))?,
            test: read_records(&self.art.path(TEST))?,
        })
    }

    fn vocab(&self) -> Result<Vocabulary> {
        self.art.require(&self.cfg, Stage::Vocab)?;
        read_json(&self.art.path(VOCAB))
    }

    fn features(&self) -> Result<(FeatureSet, FeatureSet)> {
        self.art.require(&self.cfg, Stage::Features)?;
        Ok((
            read_features(&self.art.path(FEATURES_TRAIN))?,
            read_features(&self.art.path(FEATURES_TEST))?,
        ))
    }

    fn hash(&self, stage: Stage) -> String {
        self.cfg.stage_hash(stage)
    }
}

#[derive(Serialize, Deserialize)]
struct CodeGroupsDoc {
    config_hash: String,
    seed: u64,
    groups: Vec<CodeGroup>,
}

#[derive(Serialize, Deserialize)]
struct CodeGroup {
    code: MedicalCode,
    group: usize,
}

#[derive(Serialize, Deserialize)]
struct ScalerDoc {
    config_hash: String,
    seed: u64,
    scaler: FeatureScaler,
}

pub fn gen_data(ctx: &RunContext) -> Result<()> {
    let t = Instant::now();
    ctx.art.ensure_dir()?;
    let (split, groups) = pipeline::gen_data(&ctx.cfg)?;
    write_records(&ctx.art.path(TRAIN), &split.train)?;
    write_records(&ctx.art.path(TEST), &split.test)?;
    write_json(
        &ctx.art.path(CODE_GROUPS),
        &CodeGroupsDoc {
            config_hash: ctx.hash(Stage::Data),
            seed: ctx.cfg.seed,
            groups: groups.into_iter().map(|(code, group)| CodeGroup { code, group }).collect(),
        },
    )?;
    eprintln!("gen-data: {} train / {} test records", split.train.len(), split.test.len());
    ctx.finish(Stage::Data, t, &[TRAIN, TEST, CODE_GROUPS], vec![])
}

pub fn build_vocab(ctx: &RunContext) -> Result<()> {
    let t = Instant::now();
    let split = ctx.split()?;
    let vocab = pipeline::build_vocab(&ctx.cfg, &split.train, &split.test)?;
    write_json(&ctx.art.path(VOCAB), &vocab)?;
    eprintln!("build-vocab: {} codes kept, {} dropped", vocab.len(), vocab.num_dropped());
    ctx.finish(Stage::Vocab, t, &[VOCAB], vec![])
}

pub fn train_embedding(ctx: &RunContext) -> Result<()> {
    let t = Instant::now();
    let split = ctx.split()?;
    let vocab = ctx.vocab()?;
    let run = pipeline::train_embedding(&ctx.cfg, &vocab, &split.train, &split.test)?;
    write_embedding(&ctx.art.path(EMBEDDING), &vocab, &run.embedding)?;
    ctx.finish(Stage::Embedding, t, &[EMBEDDING], run.epoch_losses)
}

fn load_embedding(ctx: &RunContext, vocab: &Vocabulary) -> Result<raregan_core::EmbeddingMatrix> {
    ctx.art.require(&ctx.cfg, Stage::Embedding)?;
    read_embedding(&ctx.art.path(EMBEDDING), vocab)
}

pub fn train_encoder(ctx: &RunContext) -> Result<()> {
    let t = Instant::now();
    let split = ctx.split()?;
    let vocab = ctx.vocab()?;
    let emb = load_embedding(ctx, &vocab)?;
    let run = pipeline::train_encoder(&ctx.cfg, &split.train, &emb, &vocab)?;
    let ckpt = Checkpoint {
        config_hash: ctx.hash(Stage::Encoder),
        seed: ctx.cfg.seed,
        config: ctx.cfg.encoder.clone(),
        feature_dim: run.encoder.feature_dim(),
        epoch_losses: run.epoch_losses.clone(),
        parameters: to_named(run.encoder.parameters().named_tensors()),
    };
    write_json(&ctx.art.path(ENCODER), &ckpt)?;
    ctx.finish(Stage::Encoder, t, &[ENCODER], run.epoch_losses)
}

pub fn encode_features(ctx: &RunContext) -> Result<()> {
    let t = Instant::now();
    let split = ctx.split()?;
    let vocab = ctx.vocab()?;
    let emb = load_embedding(ctx, &vocab)?;
    ctx.art.require(&ctx.cfg, Stage::Encoder)?;
    let ckpt: Checkpoint<EncoderConfig> = read_json(&ctx.art.path(ENCODER))?;
    let encoder = FeatureEncoder::from_parameters(&ckpt.config, &from_named(&ckpt.parameters)?)?;
    let feats = pipeline::encode_features(&encoder, &emb, &vocab, &split.train, &split.test)?;
    write_features(&ctx.art.path(FEATURES_TRAIN), &feats.train)?;
    write_features(&ctx.art.path(FEATURES_TEST), &feats.test)?;
    write_json(
        &ctx.art.path(SCALER),
        &ScalerDoc {
            config_hash: ctx.hash(Stage::Features),
            seed: ctx.cfg.seed,
            scaler: feats.scaler,
        },
    )?;
    ctx.finish(Stage::Features, t, &[FEATURES_TRAIN, FEATURES_TEST, SCALER], vec![])
}

pub fn train_gan(ctx: &RunContext) -> Result<()> {
    let t = Instant::now();
    let (train, _) = ctx.features()?;
    let run = pipeline::run_gan(&ctx.cfg, &train)?;
    write_gan_history(&ctx.art.path(GAN_HISTORY), &run.history)?;
    let d_totals = epoch_means(&run.history);
    let ckpt = Checkpoint {
        config_hash: ctx.hash(Stage::Gan),
        seed: ctx.cfg.seed,
        config: ctx.cfg.gan.clone(),
        feature_dim: train.dim(),
        epoch_losses: d_totals.clone(),
        parameters: to_named(run.model.parameters()),
    };
    write_json(&ctx.art.path(GAN), &ckpt)?;
    ctx.finish(Stage::Gan, t, &[GAN, GAN_HISTORY], d_totals)
}

/// Mean discriminator loss per epoch.
fn epoch_means(history: &[raregan_core::ssgan::StepRecord]) -> Vec<f64> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in history {
        let e = sums.entry(r.epoch).or_default();
        e.0 += r.losses.d_total;
        e.1 += 1;
    }
    sums.values().map(|(s, n)| s / *n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Lr,
    Dnn,
}

pub fn train_baseline(ctx: &RunContext, variant: Variant) -> Result<()> {
    let t = Instant::now();
    let (train, _) = ctx.features()?;
    match variant {
        Variant::Lr => {
            let run = pipeline::run_logistic(&ctx.cfg, &train)?;
            let ckpt = Checkpoint {
                config_hash: ctx.hash(Stage::Logistic),
                seed: ctx.cfg.seed,
                config: ctx.cfg.logistic.clone(),
                feature_dim: train.dim(),
                epoch_losses: run.epoch_losses.clone(),
                parameters: to_named(vec![
                    ("lr.w".to_string(), Tensor::vector(run.model.weights.clone())),
                    ("lr.b".to_string(), Tensor::vector(vec![run.model.bias])),
                ]),
            };
            write_json(&ctx.art.path(BASELINE_LR), &ckpt)?;
            ctx.finish(Stage::Logistic, t, &[BASELINE_LR], run.epoch_losses)
        }
        Variant::Dnn => {
            let run = pipeline::run_dnn(&ctx.cfg, &train)?;
            let ckpt = Checkpoint {
                config_hash: ctx.hash(Stage::Dnn),
                seed: ctx.cfg.seed,
                config: ctx.cfg.dnn.clone(),
                feature_dim: train.dim(),
                epoch_losses: run.epoch_losses.clone(),
                parameters: to_named(run.model.parameters().named_tensors()),
            };
            write_json(&ctx.art.path(BASELINE_DNN), &ckpt)?;
            ctx.finish(Stage::Dnn, t, &[BASELINE_DNN], run.epoch_losses)
        }
    }
}

fn check_dim(model: &str, ckpt_dim: usize, features: &FeatureSet) -> Result<()> {
    ensure!(
        ckpt_dim == features.dim(),
        "stale {model} model: trained on {ckpt_dim}-dimensional features but the current features have {}; rerun its training command",
        features.dim()
    );
    Ok(())
}

/// Test-set scores for each model, in [`MODELS`] order. Every model must
/// be current and match the feature dimension.
fn model_scores(ctx: &RunContext, test: &FeatureSet) -> Result<Vec<(&'static str, Vec<f64>)>> {
    let (xt, _) = pipeline::test_labels(test)?;
    let mut out = Vec::new();
    for model in MODELS {
        let scores = match model {
            "sgan" => {
                ctx.art.require(&ctx.cfg, Stage::Gan)?;
                let ckpt: Checkpoint<GanTrainConfig> = read_json(&ctx.art.path(GAN))?;
                check_dim(model, ckpt.feature_dim, test)?;
                GanModel::from_parameters(ckpt.feature_dim, &ckpt.config, &from_named(&ckpt.parameters)?)?
                    .predict_scores(&xt)?
            }
            "dnn" => {
                ctx.art.require(&ctx.cfg, Stage::Dnn)?;
                let ckpt: Checkpoint<DnnConfig> = read_json(&ctx.art.path(BASELINE_DNN))?;
                check_dim(model, ckpt.feature_dim, test)?;
                let c = &ckpt.config;
                let mut rng = raregan_core::rng_from_seed(derive_seed(c.seed, 10));
                let mut d = Discriminator::new(ckpt.feature_dim, &c.hidden, c.dropout, c.leaky_slope, &mut rng)?;
                d.parameters_mut().load_named(&from_named(&ckpt.parameters)?)?;
                d.scores(&xt)?
            }
            _ => {
                ctx.art.require(&ctx.cfg, Stage::Logistic)?;
                let ckpt: Checkpoint<LogisticConfig> = read_json(&ctx.art.path(BASELINE_LR))?;
                check_dim(model, ckpt.feature_dim, test)?;
                let p = from_named(&ckpt.parameters)?;
                let get = |name: &str| -> Result<Vec<f64>> {
                    let (_, t) = p.iter().find(|(n, _)| n == name).with_context(|| format!("{BASELINE_LR} lacks {name}"))?;
                    Ok(t.data().to_vec())
                };
                let model = LogisticModel {
                    weights: get("lr.w")?,
                    bias: get("lr.b")?.first().copied().context("empty bias")?,
                };
                ensure!(model.weights.len() == ckpt.feature_dim, "{BASELINE_LR}: weight length mismatch");
                model.scores(&xt)?
            }
        };
        out.push((model, scores));
    }
    Ok(out)
}

/// Prints and writes PR-AUC per model. Nothing is written unless every
/// model scores successfully.
pub fn evaluate(ctx: &RunContext) -> Result<Vec<MetricRow>> {
    let (_, test) = ctx.features()?;
    let scored = model_scores(ctx, &test)?;
    let (_, yt) = pipeline::test_labels(&test)?;
    let prevalence = pipeline::prevalence(&yt);
    let n_positive = yt.iter().filter(|&&p| p).count();
    let mut rows = Vec::new();
    for (model, scores) in &scored {
        let stage = stage_of(model);
        rows.push(MetricRow {
            model: model.to_string(),
            pr_auc: pr_curve(scores, &yt)?.auc(),
            prevalence,
            n_test: yt.len(),
            n_positive,
            config_hash: ctx.hash(stage),
            seed: ctx.cfg.seed,
        });
    }
    write_metrics(&ctx.art.path(METRICS), &rows)?;
    println!("prevalence\t{prevalence:.4}");
    for r in &rows {
        println!("{}\t{:.4}", r.model, r.pr_auc);
    }
    Ok(rows)
}

fn stage_of(model: &str) -> Stage {
    match model {
        "sgan" => Stage::Gan,
        "dnn" => Stage::Dnn,
        _ => Stage::Logistic,
    }
}

pub fn export_pr(ctx: &RunContext) -> Result<()> {
    let (_, test) = ctx.features()?;
    let scored = model_scores(ctx, &test)?;
    let (_, yt) = pipeline::test_labels(&test)?;
    let curves = scored
        .iter()
        .map(|(m, s)| Ok((*m, pr_curve(s, &yt)?)))
        .collect::<Result<Vec<_>>>()?;
    for (model, curve) in &curves {
        let name = pr_file(model);
        write_pr_curve(&ctx.art.path(&name), curve)?;
        eprintln!("export-pr: wrote {name} ({} points)", curve.points.len());
    }
    Ok(())
}

pub fn run_all(ctx: &RunContext) -> Result<()> {
    gen_data(ctx)?;
    build_vocab(ctx)?;
    train_embedding(ctx)?;
    train_encoder(ctx)?;
    encode_features(ctx)?;
    train_gan(ctx)?;
    train_baseline(ctx, Variant::Dnn)?;
    train_baseline(ctx, Variant::Lr)?;
    evaluate(ctx)?;
    export_pr(ctx)
}

//! On-disk artifacts: file layout, stage stamps, the manifest, and the
//! readers/writers for each format.
//!
//! Every stage writes a stamp `<stage>.stamp.json` next to its outputs
//! recording the lineage hash and seed. Downstream commands compare the
//! stamp against the hash the current config implies, which is how stale
//! or missing prerequisites are detected. JSON checkpoints also carry the
//! hash and seed inline.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use raregan_core::eval::PrCurve;
use raregan_core::numerics::Tensor;
use raregan_core::ssgan::StepRecord;
use raregan_core::{EmbeddingMatrix, Label, PatientRecord, Vocabulary};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Stage};
use crate::pipeline::FeatureSet;

pub const TRAIN: &str = "train.jsonl";
pub const TEST: &str = "test.jsonl";
pub const CODE_GROUPS: &str = "code_groups.json";
pub const VOCAB: &str = "vocab.json";
pub const EMBEDDING: &str = "embedding.csv";
pub const ENCODER: &str = "encoder.json";
pub const SCALER: &str = "scaler.json";
pub const FEATURES_TRAIN: &str = "features_train.csv";
pub const FEATURES_TEST: &str = "features_test.csv";
pub const GAN: &str = "gan.json";
pub const GAN_HISTORY: &str = "gan_history.csv";
pub const BASELINE_LR: &str = "baseline_lr.json";
pub const BASELINE_DNN: &str = "baseline_dnn.json";
pub const METRICS: &str = "metrics.csv";
pub const MANIFEST: &str = "manifest.jsonl";

pub fn stamp_file(stage: Stage) -> String {
    let id = match stage {
        Stage::Data => "data",
        Stage::Vocab => "vocab",
        Stage::Embedding => "embedding",
        Stage::Encoder => "encoder",
        Stage::Features => "features",
        Stage::Gan => "gan",
        Stage::Logistic => "baseline_lr",
        Stage::Dnn => "baseline_dnn",
    };
    format!("{id}.stamp.json")
}

pub fn pr_file(model: &str) -> String {
    format!("pr_{model}.csv")
}

/// Provenance written by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub outputs: Vec<String>,
    /// Per-epoch training losses, when the stage trains something.
    #[serde(default)]
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestLine {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_s: f64,
}

/// A named parameter array as stored in checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn to_named(params: Vec<(String, Tensor)>) -> Vec<NamedArray> {
    params
        .into_iter()
        .map(|(name, t)| NamedArray {
            name,
            shape: t.shape().to_vec(),
            data: t.into_data(),
        })
        .collect()
}

pub fn from_named(arrays: &[NamedArray]) -> Result<Vec<(String, Tensor)>> {
    arrays
        .iter()
        .map(|a| Ok((a.name.clone(), Tensor::new(a.shape.clone(), a.data.clone())?)))
        .collect()
}

/// JSON checkpoint envelope shared by every model artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub config_hash: String,
    pub seed: u64,
    pub config: C,
    pub feature_dim: usize,
    pub epoch_losses: Vec<f64>,
    pub parameters: Vec<NamedArray>,
}

/// The artifact directory of one pipeline run.
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Artifacts { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn ensure_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))
    }

    pub fn write_stamp(&self, stamp: &Stamp, stage: Stage) -> Result<()> {
        write_json(&self.path(&stamp_file(stage)), stamp)
    }

    pub fn read_stamp(&self, stage: Stage) -> Result<Option<Stamp>> {
        let p = self.path(&stamp_file(stage));
        if !p.exists() {
            return Ok(None);
        }
        read_json(&p).map(Some)
    }

    /// Fails unless `stage` has run under the current config and all of
    /// its outputs are still present.
    pub fn require(&self, cfg: &PipelineConfig, stage: Stage) -> Result<Stamp> {
        let cmd = stage.name();
        let Some(stamp) = self.read_stamp(stage)? else {
            bail!(
                "missing artifacts from `{cmd}` in {}; run `raregan {cmd}` first",
                self.root.display()
            );
        };
        for out in &stamp.outputs {
            ensure!(
                self.path(out).exists(),
                "artifact {out} is missing from {}; rerun `raregan {cmd}`",
                self.root.display()
            );
        }
        let expected = cfg.stage_hash(stage);
        ensure!(
            stamp.config_hash == expected,
            "stale artifacts from `{cmd}`: built with config hash {} but the current config implies {}; rerun `raregan {cmd}`",
            short(&stamp.config_hash),
            short(&expected)
        );
        Ok(stamp)
    }

    pub fn append_manifest(&self, line: &ManifestLine) -> Result<()> {
        let p = self.path(MANIFEST);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .with_context(|| format!("opening {}", p.display()))?;
        writeln!(f, "{}", serde_json::to_string(line)?)?;
        Ok(())
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_records(path: &Path, records: &[PatientRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<PatientRecord>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{}:{}: bad patient record", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

/// `kind,id,dim_0,...`; the reserved zero row is not written.
pub fn write_embedding(path: &Path, vocab: &Vocabulary, emb: &EmbeddingMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["kind".to_string(), "id".to_string()];
    header.extend((0..emb.dim()).map(|j| format!("dim_{j}")));
    w.write_record(&header)?;
    for (i, code) in vocab.codes().iter().enumerate() {
        let mut row = vec![code.kind.as_str().to_string(), code.id.clone()];
        row.extend(emb.vector(Some(i)).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an embedding written by [`write_embedding`], checking that rows
/// line up with `vocab`.
pub fn read_embedding(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingMatrix> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let dim = r.headers()?.len().saturating_sub(2);
    ensure!(dim > 0, "{}: no embedding columns", path.display());
    let mut data = Vec::with_capacity((vocab.len() + 1) * dim);
    let mut n = 0;
    for rec in r.records() {
        let rec = rec?;
        let code = vocab
            .code(n)
            .with_context(|| format!("{}: more rows than vocabulary entries", path.display()))?;
        ensure!(
            rec.get(0) == Some(code.kind.as_str()) && rec.get(1) == Some(code.id.as_str()),
            "{}: row {} is not vocabulary code {code}",
            path.display(),
            n + 1
        );
        ensure!(rec.len() == dim + 2, "{}: row {} has {} columns", path.display(), n + 1, rec.len());
        for field in rec.iter().skip(2) {
            data.push(field.parse::<f64>()?);
        }
        n += 1;
    }
    ensure!(n == vocab.len(), "{}: {n} rows for {} vocabulary codes", path.display(), vocab.len());
    data.extend(std::iter::repeat_n(0.0, dim));
    Ok(EmbeddingMatrix::new(Tensor::matrix(n + 1, dim, data)?)?)
}

/// `patient_id,label,f_0,...`.
pub fn write_features(path: &Path, set: &FeatureSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["patient_id".to_string(), "label".to_string()];
    header.extend((0..set.dim()).map(|j| format!("f_{j}")));
    w.write_record(&header)?;
    for (i, (id, label)) in set.patient_ids.iter().zip(&set.labels).enumerate() {
        let mut row = vec![id.clone(), label.as_str().to_string()];
        row.extend(set.x.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureSet> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let dim = r.headers()?.len().saturating_sub(2);
    ensure!(dim > 0, "{}: no feature columns", path.display());
    let (mut ids, mut labels, mut data) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        ensure!(rec.len() == dim + 2, "{}: row {} has {} columns", path.display(), i + 1, rec.len());
        ids.push(rec[0].to_string());
        labels.push(rec[1].parse::<Label>().map_err(|e| anyhow::anyhow!("{}: row {}: {e}", path.display(), i + 1))?);
        for field in rec.iter().skip(2) {
            data.push(field.parse::<f64>()?);
        }
    }
    let n = ids.len();
    Ok(FeatureSet {
        patient_ids: ids,
        labels,
        x: Tensor::matrix(n, dim, data)?,
    })
}

pub fn write_gan_history(path: &Path, history: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "epoch", "step", "L_labeled", "L_unlabeled", "L_fake", "L_entropy", "L_FM", "L_PT", "L_D", "L_G",
    ])?;
    for r in history {
        let l = &r.losses;
        let mut row = vec![r.epoch.to_string(), r.step.to_string()];
        row.extend(
            [l.labeled, l.unlabeled, l.fake, l.entropy, l.feature_matching, l.pull_away, l.d_total, l.g_total]
                .iter()
                .map(|v| v.to_string()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Loss history rows as read back from [`write_gan_history`].
pub fn read_gan_history(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    r.records()
        .map(|rec| Ok(rec?.iter().map(|f| f.parse::<f64>()).collect::<Result<Vec<_>, _>>()?))
        .collect()
}

pub fn write_pr_curve(path: &Path, curve: &PrCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["threshold", "recall", "precision"])?;
    for p in &curve.points {
        w.write_record([p.threshold.to_string(), p.recall.to_string(), p.precision.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub pr_auc: f64,
    pub prevalence: f64,
    pub n_test: usize,
    pub n_positive: usize,
    pub config_hash: String,
    pub seed: u64,
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    Ok(r.deserialize().collect::<Result<Vec<MetricRow>, _>>()?)
}

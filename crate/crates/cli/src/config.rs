//! Pipeline configuration and per-stage lineage hashes.
//!
//! One TOML document holds a section per stage plus a global seed. Each
//! stage gets its own seed derived from the global one, so the `seed` keys
//! inside sections are overwritten at load time.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use raregan_core::eval::{DnnConfig, LogisticConfig};
use raregan_core::synthgen::SplitConfig;
use raregan_core::{derive_seed, CohortConfig, EncoderConfig, GanTrainConfig, SgnsConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    pub min_count: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection { min_count: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Artifact directory; relative paths resolve against the config file.
    pub out_dir: PathBuf,
    pub cohort: CohortConfig,
    pub split: SplitConfig,
    pub vocab: VocabSection,
    pub skipgram: SgnsConfig,
    pub encoder: EncoderConfig,
    pub gan: GanTrainConfig,
    pub dnn: DnnConfig,
    pub logistic: LogisticConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut cfg = PipelineConfig {
            seed: 42,
            out_dir: PathBuf::from("run"),
            cohort: CohortConfig::default(),
            split: SplitConfig::default(),
            vocab: VocabSection::default(),
            skipgram: SgnsConfig::default(),
            encoder: EncoderConfig::default(),
            gan: GanTrainConfig::default(),
            dnn: DnnConfig::default(),
            logistic: LogisticConfig::default(),
        };
        cfg.apply_seed(42);
        cfg
    }
}

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Data,
    Vocab,
    Embedding,
    Encoder,
    Features,
    Gan,
    Logistic,
    Dnn,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Data,
        Stage::Vocab,
        Stage::Embedding,
        Stage::Encoder,
        Stage::Features,
        Stage::Gan,
        Stage::Logistic,
        Stage::Dnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "gen-data",
            Stage::Vocab => "build-vocab",
            Stage::Embedding => "train-embedding",
            Stage::Encoder => "train-encoder",
            Stage::Features => "encode-features",
            Stage::Gan => "train-gan",
            Stage::Logistic => "train-baseline --variant lr",
            Stage::Dnn => "train-baseline --variant dnn",
        }
    }

    fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Data => &[],
            Stage::Vocab => &[Stage::Data],
            Stage::Embedding => &[Stage::Vocab],
            Stage::Encoder => &[Stage::Embedding],
            Stage::Features => &[Stage::Encoder],
            Stage::Gan | Stage::Logistic | Stage::Dnn => &[Stage::Features],
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.out_dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.out_dir = parent.join(&cfg.out_dir);
            }
        }
        let seed = cfg.seed;
        cfg.apply_seed(seed);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Sets the global seed and re-derives every stage seed from it.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.cohort.seed = derive_seed(seed, 1);
        self.split.seed = derive_seed(seed, 2);
        self.skipgram.seed = derive_seed(seed, 3);
        self.encoder.seed = derive_seed(seed, 4);
        self.gan.seed = derive_seed(seed, 5);
        self.dnn.seed = derive_seed(seed, 6);
        self.logistic.seed = derive_seed(seed, 7);
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        self.skipgram.validate()?;
        self.encoder.validate()?;
        self.gan.validate()?;
        anyhow::ensure!(self.vocab.min_count >= 1, "vocab.min_count must be >= 1");
        Ok(())
    }

    /// The configuration a stage's output depends on directly.
    fn own_section(&self, stage: Stage) -> serde_json::Value {
        match stage {
            Stage::Data => serde_json::json!({ "cohort": v(&self.cohort), "split": v(&self.split) }),
            Stage::Vocab => v(&self.vocab),
            Stage::Embedding => v(&self.skipgram),
            Stage::Encoder => v(&self.encoder),
            Stage::Features => serde_json::Value::Null,
            Stage::Gan => v(&self.gan),
            Stage::Logistic => v(&self.logistic),
            Stage::Dnn => v(&self.dnn),
        }
    }

    /// Hash of everything that determines a stage's output: its own
    /// section and, recursively, its upstream stages.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let upstream: Vec<String> = stage.upstream().iter().map(|&s| self.stage_hash(s)).collect();
        let doc = serde_json::json!({
            "stage": stage.name(),
            "config": self.own_section(stage),
            "upstream": upstream,
        });
        let mut h = Sha256::new();
        h.update(doc.to_string().as_bytes());
        hex::encode(h.finalize())
    }
}

fn v<T: Serialize>(x: &T) -> serde_json::Value {
    serde_json::to_value(x).expect("config sections serialize to JSON")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_preserves_hashes() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        for s in Stage::ALL {
            assert_eq!(back.stage_hash(s), cfg.stage_hash(s));
        }
    }

    #[test]
    fn hashes_follow_lineage() {
        let base = PipelineConfig::default();
        let mut cfg = base.clone();
        cfg.encoder.hidden = 16;
        for s in [Stage::Data, Stage::Vocab, Stage::Embedding] {
            assert_eq!(cfg.stage_hash(s), base.stage_hash(s));
        }
        for s in [Stage::Encoder, Stage::Features, Stage::Gan, Stage::Logistic, Stage::Dnn] {
            assert_ne!(cfg.stage_hash(s), base.stage_hash(s));
        }
        let mut cfg = base.clone();
        cfg.dnn.epochs += 1;
        assert_eq!(cfg.stage_hash(Stage::Gan), base.stage_hash(Stage::Gan));
        assert_ne!(cfg.stage_hash(Stage::Dnn), base.stage_hash(Stage::Dnn));
    }

    #[test]
    fn seed_reaches_every_stage() {
        let mut cfg = PipelineConfig::default();
        let before: Vec<String> = Stage::ALL.iter().map(|&s| cfg.stage_hash(s)).collect();
        cfg.apply_seed(7);
        for (s, h) in Stage::ALL.iter().zip(before) {
            if *s != Stage::Features {
                assert_ne!(cfg.stage_hash(*s), h, "{s:?}");
            }
        }
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg: PipelineConfig = toml::from_str("seed = 3\n[gan]\nepochs = 2\n").unwrap();
        assert_eq!(cfg.gan.epochs, 2);
        assert_eq!(cfg.gan.batch_size, 128);
        assert!(toml::from_str::<PipelineConfig>("[gan]\nepoch = 2\n").is_err());
    }
}

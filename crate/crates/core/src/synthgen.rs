//! Seeded synthetic patient cohorts.
//!
//! Codes are grouped into therapeutic areas (TAs). Each patient draws most
//! codes from one primary TA and, sometimes, a secondary one; within a TA,
//! code popularity is Zipf-like. Diseased patients additionally receive
//! motif codes at random positions with probability `signal_strength` each.
//! Every patient also receives each motif code with a small background rate,
//! so the motif is informative but not a perfect marker.
//!
//! Labels are assigned by exact counts: `floor(n * prevalence)` positives,
//! `floor(n * (1 - prevalence - unlabeled_fraction))` negatives, and the
//! remainder unlabeled. A fraction of unlabeled patients (`hidden_positive_rate`)
//! carries the disease without a label.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::math::{floor_count, powf};
use crate::vocab::{CodeKind, MedicalCode};
use crate::{derive_seed, rng_from_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Unlabeled => "unlabeled",
        }
    }

    /// `Some(1)` for positive, `Some(0)` for negative.
    pub fn binary(self) -> Option<u8> {
        match self {
            Label::Positive => Some(1),
            Label::Negative => Some(0),
            Label::Unlabeled => None,
        }
    }
}

impl core::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            "unlabeled" => Ok(Label::Unlabeled),
            other => Err(Error::Config(format!("unknown label `{other}`"))),
        }
    }
}

/// One patient: time-ordered codes plus demographics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct PatientRecord {
    pub patient_id: String,
    pub codes: Vec<MedicalCode>,
    pub age: u32,
    /// 0 or 1.
    pub gender: u8,
    pub label: Label,
}

#[derive(Deserialize)]
struct RawRecord {
    patient_id: String,
    codes: Vec<MedicalCode>,
    age: u32,
    gender: u8,
    label: Label,
}

impl TryFrom<RawRecord> for PatientRecord {
    type Error = Error;

    fn try_from(r: RawRecord) -> Result<Self> {
        PatientRecord::new(r.patient_id, r.codes, r.age, r.gender, r.label)
    }
}

impl PatientRecord {
    pub fn new(patient_id: String, codes: Vec<MedicalCode>, age: u32, gender: u8, label: Label) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::Config(format!("patient `{patient_id}` has no codes")));
        }
        if age > 120 {
            return Err(Error::Config(format!("patient `{patient_id}` has age {age} > 120")));
        }
        if gender > 1 {
            return Err(Error::Config(format!("patient `{patient_id}` has gender {gender}, expected 0 or 1")));
        }
        Ok(PatientRecord {
            patient_id,
            codes,
            age,
            gender,
            label,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_patients: usize,
    /// Fraction of the cohort labeled positive.
    pub prevalence: f64,
    /// Labeled training negatives per training positive (used by [`split_cohort`]).
    pub labeled_negative_ratio: f64,
    pub unlabeled_fraction: f64,
    /// Distinct codes, motif codes included.
    pub vocab_size: usize,
    pub n_therapeutic_areas: usize,
    pub n_motif_codes: usize,
    /// Per-motif-code inclusion probability for diseased patients.
    pub signal_strength: f64,
    /// Per-motif-code inclusion probability for every patient.
    pub motif_background_rate: f64,
    /// Fraction of unlabeled patients that carry the disease.
    pub hidden_positive_rate: f64,
    /// Probability that a patient has a secondary therapeutic area.
    pub secondary_area_prob: f64,
    /// Probability that a code is drawn from the secondary area, when present.
    pub secondary_code_rate: f64,
    /// Zipf exponent of code popularity inside an area.
    pub zipf_exponent: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_patients: 10_000,
            prevalence: 0.016,
            labeled_negative_ratio: 3.0,
            unlabeled_fraction: 0.7,
            vocab_size: 200,
            n_therapeutic_areas: 4,
            n_motif_codes: 4,
            signal_strength: 0.5,
            motif_background_rate: 0.03,
            hidden_positive_rate: 0.016,
            secondary_area_prob: 0.5,
            secondary_code_rate: 0.3,
            zipf_exponent: 0.8,
            min_len: 20,
            max_len: 80,
            seed: 42,
        }
    }
}

/// Exact per-label cohort sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelCounts {
    pub positive: usize,
    pub negative: usize,
    pub unlabeled: usize,
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} is not a probability")))
            }
        };
        if self.n_patients == 0 {
            return Err(Error::Config("n_patients must be positive".into()));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::Config(format!("prevalence {} outside (0, 1)", self.prevalence)));
        }
        prob("unlabeled_fraction", self.unlabeled_fraction)?;
        prob("signal_strength", self.signal_strength)?;
        prob("motif_background_rate", self.motif_background_rate)?;
        prob("hidden_positive_rate", self.hidden_positive_rate)?;
        prob("secondary_area_prob", self.secondary_area_prob)?;
        prob("secondary_code_rate", self.secondary_code_rate)?;
        if self.prevalence + self.unlabeled_fraction > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "label fractions exceed 1: prevalence {} + unlabeled_fraction {}",
                self.prevalence, self.unlabeled_fraction
            )));
        }
        if !(self.labeled_negative_ratio >= 0.0) {
            return Err(Error::Config("labeled_negative_ratio must be non-negative".into()));
        }
        if self.n_therapeutic_areas < 2 {
            return Err(Error::Config("at least two therapeutic areas are required".into()));
        }
        if self.vocab_size < self.n_motif_codes + 2 * self.n_therapeutic_areas {
            return Err(Error::Config(format!(
                "vocab_size {} too small for {} motif codes and two codes per area",
                self.vocab_size, self.n_motif_codes
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!("invalid length range {}..={}", self.min_len, self.max_len)));
        }
        if !(self.zipf_exponent >= 0.0) {
            return Err(Error::Config("zipf_exponent must be non-negative".into()));
        }
        Ok(())
    }

    pub fn label_counts(&self) -> Result<LabelCounts> {
        self.validate()?;
        let positive = floor_count(self.n_patients, self.prevalence);
        let negative = floor_count(self.n_patients, (1.0 - self.prevalence - self.unlabeled_fraction).max(0.0));
        let negative = negative.min(self.n_patients - positive);
        Ok(LabelCounts {
            positive,
            negative,
            unlabeled: self.n_patients - positive - negative,
        })
    }
}

/// The code universe implied by a config: per-area code lists and the motif codes.
#[derive(Debug, Clone)]
pub struct CodeUniverse {
    pub areas: Vec<Vec<MedicalCode>>,
    pub motif: Vec<MedicalCode>,
    weights: Vec<WeightedIndex<f64>>,
}

impl CodeUniverse {
    pub fn new(cfg: &CohortConfig) -> Result<Self> {
        cfg.validate()?;
        let background = cfg.vocab_size - cfg.n_motif_codes;
        let n_ta = cfg.n_therapeutic_areas;
        let mut areas = Vec::with_capacity(n_ta);
        let mut weights = Vec::with_capacity(n_ta);
        for ta in 0..n_ta {
            let size = background / n_ta + usize::from(ta < background % n_ta);
            let codes: Vec<MedicalCode> = (0..size)
                .map(|r| MedicalCode::new(CodeKind::ALL[r % 3], format!("TA{ta}-{r:03}")))
                .collect::<Result<_>>()?;
            let w: Vec<f64> = (0..size).map(|r| 1.0 / powf((r + 1) as f64, cfg.zipf_exponent)).collect();
            weights.push(WeightedIndex::new(w).map_err(|e| Error::Config(format!("code weights: {e}")))?);
            areas.push(codes);
        }
        let motif = (0..cfg.n_motif_codes)
            .map(|j| MedicalCode::new(if j % 2 == 0 { CodeKind::Dx } else { CodeKind::Rx }, format!("MOTIF-{j}")))
            .collect::<Result<_>>()?;
        Ok(CodeUniverse { areas, motif, weights })
    }

    /// Therapeutic-area id of every non-motif code.
    pub fn code_groups(&self) -> BTreeMap<MedicalCode, usize> {
        self.areas
            .iter()
            .enumerate()
            .flat_map(|(ta, codes)| codes.iter().map(move |c| (c.clone(), ta)))
            .collect()
    }
}

/// Generates the cohort. Identical configs give identical output.
pub fn generate_cohort(cfg: &CohortConfig) -> Result<Vec<PatientRecord>> {
    let counts = cfg.label_counts()?;
    let universe = CodeUniverse::new(cfg)?;
    let mut labels = Vec::with_capacity(cfg.n_patients);
    labels.extend(core::iter::repeat_n(Label::Positive, counts.positive));
    labels.extend(core::iter::repeat_n(Label::Negative, counts.negative));
    labels.extend(core::iter::repeat_n(Label::Unlabeled, counts.unlabeled));
    labels.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, 0)));

    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| generate_patient(cfg, &universe, i, label))
        .collect()
}

fn generate_patient(cfg: &CohortConfig, universe: &CodeUniverse, i: usize, label: Label) -> Result<PatientRecord> {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, i as u64 + 1));
    let n_ta = cfg.n_therapeutic_areas;
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    let primary = rng.random_range(0..n_ta);
    let secondary = if rng.random::<f64>() < cfg.secondary_area_prob {
        Some((primary + 1 + rng.random_range(0..n_ta - 1)) % n_ta)
    } else {
        None
    };
    let mut codes = Vec::with_capacity(len + cfg.n_motif_codes);
    for _ in 0..len {
        let ta = match secondary {
            Some(s) if rng.random::<f64>() < cfg.secondary_code_rate => s,
            _ => primary,
        };
        let r = universe.weights[ta].sample(&mut rng);
        codes.push(universe.areas[ta][r].clone());
    }
    let diseased = match label {
        Label::Positive => true,
        Label::Negative => false,
        Label::Unlabeled => rng.random::<f64>() < cfg.hidden_positive_rate,
    };
    for m in &universe.motif {
        let planted = rng.random::<f64>() < cfg.signal_strength;
        let background = rng.random::<f64>() < cfg.motif_background_rate;
        let pos = rng.random_range(0..=codes.len());
        if (diseased && planted) || background {
            codes.insert(pos, m.clone());
        }
    }
    let age = rng.random_range(18..=90);
    let gender = rng.random_range(0..=1u8);
    PatientRecord::new(format!("P{i:06}"), codes, age, gender, label)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of positives used for training.
    pub train_fraction: f64,
    /// Training negatives per training positive.
    pub labeled_negative_ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.8,
            labeled_negative_ratio: 3.0,
            seed: 42,
        }
    }
}

/// Per-split label counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: LabelCounts,
    pub test: LabelCounts,
}

/// The split arithmetic: `floor(train_fraction * positives)` training
/// positives, `floor(ratio * training positives)` training negatives, every
/// unlabeled patient in train; the rest of the positives and negatives form
/// the test set.
pub fn split_counts(total: LabelCounts, cfg: &SplitConfig) -> Result<SplitCounts> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::Config(format!("train_fraction {} outside (0, 1)", cfg.train_fraction)));
    }
    if !(cfg.labeled_negative_ratio > 0.0) {
        return Err(Error::Config("labeled_negative_ratio must be positive".into()));
    }
    let train_pos = floor_count(total.positive, cfg.train_fraction);
    if train_pos == 0 || train_pos == total.positive {
        return Err(Error::InsufficientData(format!(
            "{} positives cannot be split at train fraction {}",
            total.positive, cfg.train_fraction
        )));
    }
    let train_neg = floor_count(train_pos, cfg.labeled_negative_ratio).max(1);
    if train_neg >= total.negative {
        return Err(Error::InsufficientData(format!(
            "{} negatives leave none for testing after {train_neg} training negatives",
            total.negative
        )));
    }
    Ok(SplitCounts {
        train: LabelCounts {
            positive: train_pos,
            negative: train_neg,
            unlabeled: total.unlabeled,
        },
        test: LabelCounts {
            positive: total.positive - train_pos,
            negative: total.negative - train_neg,
            unlabeled: 0,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSplit {
    pub train: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
}

/// Disjoint, exhaustive train/test partition following [`split_counts`].
/// Records keep their cohort order within each side.
pub fn split_cohort(cohort: &[PatientRecord], cfg: &SplitConfig) -> Result<CohortSplit> {
    let mut by_label: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, r) in cohort.iter().enumerate() {
        by_label.entry(r.label).or_default().push(i);
    }
    let take = |l: Label| by_label.get(&l).cloned().unwrap_or_default();
    let (mut pos, mut neg, unl) = (take(Label::Positive), take(Label::Negative), take(Label::Unlabeled));
    let counts = split_counts(
        LabelCounts {
            positive: pos.len(),
            negative: neg.len(),
            unlabeled: unl.len(),
        },
        cfg,
    )?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0x5_0117));
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut in_train = vec![false; cohort.len()];
    for &i in pos[..counts.train.positive].iter().chain(&neg[..counts.train.negative]).chain(&unl) {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in cohort.iter().zip(in_train) {
        if t {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok(CohortSplit { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn small(n: usize) -> CohortConfig {
        CohortConfig {
            n_patients: n,
            ..Default::default()
        }
    }

    fn count(records: &[PatientRecord], l: Label) -> usize {
        records.iter().filter(|r| r.label == l).count()
    }

    #[test]
    fn thousand_patients_have_sixteen_positives() {
        let cohort = generate_cohort(&small(1000)).unwrap();
        assert_eq!(cohort.len(), 1000);
        assert_eq!(count(&cohort, Label::Positive), 16);
        let c = small(1000).label_counts().unwrap();
        assert_eq!(count(&cohort, Label::Negative), c.negative);
        assert_eq!(count(&cohort, Label::Unlabeled), c.unlabeled);
        assert_eq!(c.positive + c.negative + c.unlabeled, 1000);
    }

    #[test]
    fn same_seed_same_cohort() {
        let a = generate_cohort(&small(300)).unwrap();
        let b = generate_cohort(&small(300)).unwrap();
        assert_eq!(a, b);
        let c = generate_cohort(&CohortConfig { seed: 7, ..small(300) }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn records_respect_invariants() {
        let cfg = small(500);
        let universe = CodeUniverse::new(&cfg).unwrap();
        let known: BTreeSet<MedicalCode> =
            universe.code_groups().into_keys().chain(universe.motif.iter().cloned()).collect();
        assert_eq!(known.len(), cfg.vocab_size);
        for r in generate_cohort(&cfg).unwrap() {
            assert!(!r.codes.is_empty() && r.age <= 120 && r.gender <= 1);
            assert!(r.codes.len() >= cfg.min_len && r.codes.len() <= cfg.max_len + cfg.n_motif_codes);
            assert!(r.codes.iter().all(|c| known.contains(c)));
        }
    }

    #[test]
    fn inconsistent_fractions_rejected() {
        let cfg = CohortConfig {
            prevalence: 0.4,
            unlabeled_fraction: 0.7,
            ..small(100)
        };
        assert!(matches!(generate_cohort(&cfg), Err(Error::Config(_))));
        assert!(generate_cohort(&CohortConfig { prevalence: 0.0, ..small(100) }).is_err());
        assert!(generate_cohort(&CohortConfig { min_len: 0, ..small(100) }).is_err());
    }

    #[test]
    fn motif_codes_enriched_in_positives_only_with_signal() {
        let motif_rate = |signal: f64, label: Label| {
            let cfg = CohortConfig {
                signal_strength: signal,
                prevalence: 0.2,
                unlabeled_fraction: 0.0,
                ..small(3000)
            };
            let cohort = generate_cohort(&cfg).unwrap();
            let sel: Vec<_> = cohort.iter().filter(|r| r.label == label).collect();
            let hits = sel.iter().flat_map(|r| &r.codes).filter(|c| c.id.starts_with("MOTIF")).count();
            hits as f64 / sel.len() as f64
        };
        assert!(motif_rate(0.5, Label::Positive) > 1.5);
        assert!(motif_rate(0.5, Label::Negative) < 0.3);
        let (p, n) = (motif_rate(0.0, Label::Positive), motif_rate(0.0, Label::Negative));
        assert!((p - n).abs() < 0.1, "{p} vs {n}");
    }

    #[test]
    fn split_hundred_positives() {
        let total = LabelCounts {
            positive: 100,
            negative: 1000,
            unlabeled: 50,
        };
        let s = split_counts(total, &SplitConfig::default()).unwrap();
        assert_eq!((s.train.positive, s.test.positive), (80, 20));
        assert_eq!((s.train.negative, s.test.negative), (240, 760));
        assert_eq!((s.train.unlabeled, s.test.unlabeled), (50, 0));
    }

    #[test]
    fn population_scale_split_has_no_unlabeled_test_patients() {
        let total = LabelCounts {
            positive: 29_149,
            negative: 506_450,
            unlabeled: 1_257_161,
        };
        let s = split_counts(total, &SplitConfig::default()).unwrap();
        assert_eq!(s.test.unlabeled, 0);
        assert_eq!(s.train.unlabeled, 1_257_161);
        assert_eq!(s.train.positive + s.test.positive, 29_149);
        assert_eq!(s.train.negative + s.test.negative, 506_450);
        assert_eq!(s.train.negative, 3 * s.train.positive);
    }

    #[test]
    fn split_is_a_partition() {
        let cohort = generate_cohort(&small(2000)).unwrap();
        let split = split_cohort(&cohort, &SplitConfig::default()).unwrap();
        let ids = |rs: &[PatientRecord]| rs.iter().map(|r| r.patient_id.clone()).collect::<BTreeSet<_>>();
        let (tr, te) = (ids(&split.train), ids(&split.test));
        assert!(tr.is_disjoint(&te));
        assert_eq!(tr.union(&te).count(), cohort.len());
        assert_eq!(count(&split.test, Label::Unlabeled), 0);
        assert_eq!(count(&split.train, Label::Positive), 25);
        assert_eq!(count(&split.train, Label::Negative), 75);
        assert_eq!(count(&split.test, Label::Positive), 7);
        assert_eq!(split, split_cohort(&cohort, &SplitConfig::default()).unwrap());
    }

    #[test]
    fn too_few_positives_to_split() {
        let total = LabelCounts {
            positive: 1,
            negative: 10,
            unlabeled: 0,
        };
        assert!(matches!(split_counts(total, &SplitConfig::default()), Err(Error::InsufficientData(_))));
    }
}

//! Medical-code vocabulary with min-count filtering and the one-hot index map.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::synthgen::PatientRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CodeKind {
    /// Diagnosis.
    Dx,
    /// Prescription.
    Rx,
    /// Procedure.
    Px,
}

impl CodeKind {
    pub const ALL: [CodeKind; 3] = [CodeKind::Dx, CodeKind::Rx, CodeKind::Px];

    pub fn as_str(self) -> &'static str {
        match self {
            CodeKind::Dx => "Dx",
            CodeKind::Rx => "Rx",
            CodeKind::Px => "Px",
        }
    }
}

impl core::str::FromStr for CodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Dx" => Ok(CodeKind::Dx),
            "Rx" => Ok(CodeKind::Rx),
            "Px" => Ok(CodeKind::Px),
            other => Err(Error::Config(format!("unknown code kind `{other}`"))),
        }
    }
}

/// One event in a patient history. `(kind, id)` is the unit of uniqueness.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawCode")]
pub struct MedicalCode {
    pub kind: CodeKind,
    pub id: String,
}

#[derive(Deserialize)]
struct RawCode {
    kind: CodeKind,
    id: String,
}

impl TryFrom<RawCode> for MedicalCode {
    type Error = Error;

    fn try_from(raw: RawCode) -> Result<Self> {
        MedicalCode::new(raw.kind, raw.id)
    }
}

impl MedicalCode {
    pub fn new(kind: CodeKind, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Config("medical code identifier must be non-empty".into()));
        }
        Ok(MedicalCode { kind, id })
    }
}

impl fmt::Display for MedicalCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.id)
    }
}

/// Result of the one-hot map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OneHot {
    /// A single 1 at `index` in a vector of length `size`.
    Index { index: usize, size: usize },
    /// Rare or unknown code; embeds as the zero vector.
    Dropped,
}

impl OneHot {
    pub fn to_dense(self, size: usize) -> Vec<f64> {
        let mut v = vec![0.0; size];
        if let OneHot::Index { index, .. } = self {
            v[index] = 1.0;
        }
        v
    }
}

/// Bijection between kept codes and `0..len()`, ordered by descending
/// frequency with ties broken by identifier (then kind).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VocabularyDoc", try_from = "VocabularyDoc")]
pub struct Vocabulary {
    min_count: usize,
    codes: Vec<MedicalCode>,
    counts: Vec<usize>,
    index: BTreeMap<MedicalCode, usize>,
    dropped: BTreeMap<MedicalCode, usize>,
}

impl Vocabulary {
    /// Counts every code occurrence and keeps codes seen at least `min_count` times.
    pub fn build(records: &[PatientRecord], min_count: usize) -> Result<Self> {
        Self::from_sequences(records.iter().map(|r| r.codes.as_slice()), min_count)
    }

    pub fn from_sequences<'a, I>(sequences: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [MedicalCode]>,
    {
        if min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let mut freq: BTreeMap<&MedicalCode, usize> = BTreeMap::new();
        for seq in sequences {
            for code in seq {
                *freq.entry(code).or_default() += 1;
            }
        }
        if freq.is_empty() {
            return Err(Error::Empty("vocabulary corpus"));
        }
        let mut kept: Vec<(&MedicalCode, usize)> = Vec::new();
        let mut dropped = BTreeMap::new();
        for (code, count) in freq {
            if count >= min_count {
                kept.push((code, count));
            } else {
                dropped.insert(code.clone(), count);
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.id.cmp(&b.0.id)).then_with(|| a.0.kind.cmp(&b.0.kind)));
        let codes: Vec<MedicalCode> = kept.iter().map(|(c, _)| (*c).clone()).collect();
        let counts = kept.iter().map(|(_, n)| *n).collect();
        let index = codes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        Ok(Vocabulary {
            min_count,
            codes,
            counts,
            index,
            dropped,
        })
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// Number of kept codes `V`.
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index_of(&self, code: &MedicalCode) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn code(&self, index: usize) -> Option<&MedicalCode> {
        self.codes.get(index)
    }

    pub fn codes(&self) -> &[MedicalCode] {
        &self.codes
    }

    /// Occurrence count of kept code `index`.
    pub fn count(&self, index: usize) -> usize {
        self.counts[index]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Frequency of any code seen during the build, kept or dropped.
    pub fn frequency(&self, code: &MedicalCode) -> Option<usize> {
        self.index_of(code).map(|i| self.counts[i]).or_else(|| self.dropped.get(code).copied())
    }

    pub fn dropped(&self) -> impl Iterator<Item = (&MedicalCode, usize)> {
        self.dropped.iter().map(|(c, n)| (c, *n))
    }

    pub fn num_dropped(&self) -> usize {
        self.dropped.len()
    }

    pub fn one_hot(&self, code: &MedicalCode) -> OneHot {
        match self.index_of(code) {
            Some(index) => OneHot::Index { index, size: self.len() },
            None => OneHot::Dropped,
        }
    }

    /// Maps a sequence to kept indices; dropped and unknown codes become `None`.
    pub fn encode_sequence(&self, codes: &[MedicalCode]) -> Vec<Option<usize>> {
        codes.iter().map(|c| self.index_of(c)).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyDoc {
    min_count: usize,
    codes: Vec<CodeEntry>,
    #[serde(default)]
    dropped: Vec<DroppedEntry>,
}

#[derive(Serialize, Deserialize)]
struct CodeEntry {
    kind: CodeKind,
    id: String,
    index: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct DroppedEntry {
    kind: CodeKind,
    id: String,
    count: usize,
}

impl From<Vocabulary> for VocabularyDoc {
    fn from(v: Vocabulary) -> Self {
        VocabularyDoc {
            min_count: v.min_count,
            codes: v
                .codes
                .into_iter()
                .zip(v.counts)
                .enumerate()
                .map(|(index, (c, count))| CodeEntry {
                    kind: c.kind,
                    id: c.id,
                    index,
                    count,
                })
                .collect(),
            dropped: v
                .dropped
                .into_iter()
                .map(|(c, count)| DroppedEntry {
                    kind: c.kind,
                    id: c.id,
                    count,
                })
                .collect(),
        }
    }
}

impl TryFrom<VocabularyDoc> for Vocabulary {
    type Error = Error;

    fn try_from(doc: VocabularyDoc) -> Result<Self> {
        if doc.min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let n = doc.codes.len();
        let mut slots: Vec<Option<(MedicalCode, usize)>> = vec![None; n];
        for e in doc.codes {
            if e.index >= n || slots[e.index].is_some() {
                return Err(Error::Config(format!("vocabulary index {} is out of range or repeated", e.index)));
            }
            if e.count < doc.min_count {
                return Err(Error::Config(format!("kept code `{}` has count below min_count", e.id)));
            }
            slots[e.index] = Some((MedicalCode::new(e.kind, e.id)?, e.count));
        }
        let (codes, counts): (Vec<_>, Vec<_>) = slots.into_iter().map(|s| s.expect("all slots filled")).unzip();
        let index: BTreeMap<MedicalCode, usize> = codes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        if index.len() != n {
            return Err(Error::Config("vocabulary lists a code twice".into()));
        }
        let mut dropped = BTreeMap::new();
        for d in doc.dropped {
            if d.count >= doc.min_count {
                return Err(Error::Config(format!("dropped code `{}` has count at or above min_count", d.id)));
            }
            dropped.insert(MedicalCode::new(d.kind, d.id)?, d.count);
        }
        Ok(Vocabulary {
            min_count: doc.min_count,
            codes,
            counts,
            index,
            dropped,
        })
    }
}

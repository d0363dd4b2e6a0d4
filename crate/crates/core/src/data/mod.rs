//! Utterance pairs, datasets and their JSONL representation, stratified
//! splitting, batching, and the synthetic generator.

mod batch;
mod jsonl;
mod split;
mod synthetic;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{M3vError, Result};

pub use batch::{batch_iter, Batch, BatchIter};
pub use jsonl::{load_jsonl, parse_pair, save_jsonl, to_jsonl_string};
pub use split::split;
pub use synthetic::{generate_synthetic, GenConfig};

/// Directedness label. Serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    NonDeviceDirected,
    DeviceDirected,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::NonDeviceDirected => 0,
            Label::DeviceDirected => 1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::DeviceDirected
    }

    pub fn from_bool(directed: bool) -> Self {
        if directed {
            Label::DeviceDirected
        } else {
            Label::NonDeviceDirected
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::NonDeviceDirected),
            1 => Ok(Label::DeviceDirected),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.index() as u8
    }
}

/// One utterance: acoustic frames, transcript token features and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtterancePair {
    pub id: String,
    /// `frames × audio_feat_dim`
    #[serde(rename = "audio")]
    pub audio_frames: Vec<Vec<f64>>,
    /// `tokens × text_feat_dim`
    #[serde(rename = "text")]
    pub text_tokens: Vec<Vec<f64>>,
    pub label: Label,
    /// Ground truth for synthetic diagnostics: the transcript does not belong
    /// to this audio.
    #[serde(default)]
    pub misaligned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

impl UtterancePair {
    pub fn audio_dim(&self) -> usize {
        self.audio_frames.first().map_or(0, Vec::len)
    }

    pub fn text_dim(&self) -> usize {
        self.text_tokens.first().map_or(0, Vec::len)
    }

    /// Checks the per-sample invariants and returns `(audio_dim, text_dim)`.
    pub fn validate(&self) -> std::result::Result<(usize, usize), String> {
        if self.audio_frames.is_empty() {
            return Err(format!("{}: no audio frames", self.id));
        }
        if self.text_tokens.is_empty() {
            return Err(format!("{}: no text tokens", self.id));
        }
        let (a, t) = (self.audio_dim(), self.text_dim());
        if a == 0 || t == 0 {
            return Err(format!("{}: zero-width feature vectors", self.id));
        }
        if self.audio_frames.iter().any(|f| f.len() != a) {
            return Err(format!("{}: ragged audio frames", self.id));
        }
        if self.text_tokens.iter().any(|f| f.len() != t) {
            return Err(format!("{}: ragged text tokens", self.id));
        }
        let finite = |rows: &[Vec<f64>]| rows.iter().flatten().all(|v| v.is_finite());
        if !finite(&self.audio_frames) || !finite(&self.text_tokens) {
            return Err(format!("{}: non-finite feature value", self.id));
        }
        Ok((a, t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Loaded,
    /// Generated from a [`GenConfig`] whose canonical JSON hashes to this value.
    Synthetic(String),
}

/// A validated, immutable collection of utterance pairs with homogeneous
/// feature widths and unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<UtterancePair>,
    audio_feat_dim: usize,
    text_feat_dim: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(samples: Vec<UtterancePair>, provenance: Provenance) -> Result<Self> {
        let first = samples.first().ok_or(M3vError::EmptyDataset)?;
        let (audio_feat_dim, text_feat_dim) = first.validate().map_err(M3vError::Input)?;
        let mut ids = HashSet::with_capacity(samples.len());
        for s in &samples {
            let dims = s.validate().map_err(M3vError::Input)?;
            if dims != (audio_feat_dim, text_feat_dim) {
                return Err(M3vError::Input(format!(
                    "{}: feature dims {:?} differ from dataset dims {:?}",
                    s.id,
                    dims,
                    (audio_feat_dim, text_feat_dim)
                )));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(M3vError::Input(format!("duplicate id {}", s.id)));
            }
        }
        Ok(Dataset {
            samples,
            audio_feat_dim,
            text_feat_dim,
            provenance,
        })
    }

    pub fn samples(&self) -> &[UtterancePair] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn audio_feat_dim(&self) -> usize {
        self.audio_feat_dim
    }

    pub fn text_feat_dim(&self) -> usize {
        self.text_feat_dim
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn has_misalignment_flags(&self) -> bool {
        self.samples.iter().any(|s| s.misaligned)
    }

    pub fn misaligned_fraction(&self) -> f64 {
        self.samples.iter().filter(|s| s.misaligned).count() as f64 / self.len() as f64
    }

    pub fn positive_fraction(&self) -> f64 {
        self.samples.iter().filter(|s| s.label.is_positive()).count() as f64 / self.len() as f64
    }

    /// Subset by index, keeping this dataset's provenance.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(
            idx.iter().map(|&i| self.samples[i].clone()).collect(),
            self.provenance.clone(),
        )
    }

    /// SHA-256 over the canonical JSONL serialization.
    pub fn digest(&self) -> String {
        crate::util::sha256_hex(to_jsonl_string(self).as_bytes())
    }
}

#[cfg(test)]
pub(crate) fn tiny_pair(id: &str, audio: &[&[f64]], text: &[&[f64]], label: Label) -> UtterancePair {
    UtterancePair {
        id: id.to_string(),
        audio_frames: audio.iter().map(|r| r.to_vec()).collect(),
        text_tokens: text.iter().map(|r| r.to_vec()).collect(),
        label,
        misaligned: false,
        transcript: None,
    }
}

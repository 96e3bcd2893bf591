//! Representation dumps: per-sentence, per-layer, per-token activations of one
//! representation kind, the labeled feature matrices derived from them, and the
//! `SPINREPS` binary format.

mod format;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{decode_dump, encode_dump, read_dump, write_dump, DUMP_MAGIC, DUMP_VERSION};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Which internal representation a dump holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepKind {
    /// Output of each transformer block.
    HiddenStates,
    /// Post-nonlinearity intermediate of each block's feed-forward network.
    Activations,
}

impl RepKind {
    pub const ALL: [RepKind; 2] = [RepKind::HiddenStates, RepKind::Activations];

    pub fn as_str(self) -> &'static str {
        match self {
            RepKind::HiddenStates => "hidden_states",
            RepKind::Activations => "activations",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            RepKind::HiddenStates => 0,
            RepKind::Activations => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RepKind::HiddenStates),
            1 => Some(RepKind::Activations),
            _ => None,
        }
    }
}

impl fmt::Display for RepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hidden_states" => Ok(RepKind::HiddenStates),
            "activations" => Ok(RepKind::Activations),
            other => Err(Error::invalid(format!("unknown representation kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpManifest {
    pub model_name: String,
    pub dataset_name: String,
    pub split: Split,
    pub n_classes: usize,
    pub created_by: String,
    pub extra: BTreeMap<String, String>,
}

impl DumpManifest {
    pub fn new(model_name: impl Into<String>, dataset_name: impl Into<String>, split: Split, n_classes: usize) -> Self {
        Self {
            model_name: model_name.into(),
            dataset_name: dataset_name.into(),
            split,
            n_classes,
            created_by: concat!("spin-core ", env!("CARGO_PKG_VERSION")).to_string(),
            extra: BTreeMap::new(),
        }
    }
}

/// One sentence: `data` is laid out `[layer][token][dim]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord {
    pub n_tokens: usize,
    pub label: usize,
    pub data: Vec<f32>,
}

impl SentenceRecord {
    /// The `[n_tokens][dim]` block of one layer.
    pub fn layer(&self, layer: usize, dim: usize) -> &[f32] {
        let stride = self.n_tokens * dim;
        &self.data[layer * stride..(layer + 1) * stride]
    }

    pub fn token(&self, layer: usize, token: usize, dim: usize) -> &[f32] {
        let start = (layer * self.n_tokens + token) * dim;
        &self.data[start..start + dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationDump {
    pub rep_kind: RepKind,
    pub n_layers: usize,
    pub dim: usize,
    pub sentences: Vec<SentenceRecord>,
    pub manifest: DumpManifest,
}

impl RepresentationDump {
    pub fn n_sentences(&self) -> usize {
        self.sentences.len()
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.n_classes
    }

    pub fn labels(&self) -> Vec<usize> {
        self.sentences.iter().map(|s| s.label).collect()
    }

    /// Checks every type invariant; called before writing and after reading.
    pub fn validate(&self) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(Error::EmptyDump);
        }
        if self.n_layers == 0 || self.dim == 0 {
            return Err(Error::InvalidDump("n_layers and dim must be positive".into()));
        }
        if self.manifest.n_classes < 2 {
            return Err(Error::InvalidDump(format!(
                "n_classes must be at least 2, got {}",
                self.manifest.n_classes
            )));
        }
        for (si, s) in self.sentences.iter().enumerate() {
            if s.n_tokens == 0 {
                return Err(Error::InvalidDump(format!("sentence {si} has no tokens")));
            }
            if s.label >= self.manifest.n_classes {
                return Err(Error::InvalidDump(format!(
                    "sentence {si} has label {} but n_classes is {}",
                    s.label, self.manifest.n_classes
                )));
            }
            let expected = self.n_layers * s.n_tokens * self.dim;
            if s.data.len() != expected {
                return Err(Error::InvalidDump(format!(
                    "sentence {si} holds {} values, expected {expected}",
                    s.data.len()
                )));
            }
            if let Some(pos) = s.data.iter().position(|v| !v.is_finite()) {
                let layer = pos / (s.n_tokens * self.dim);
                let token = (pos / self.dim) % s.n_tokens;
                return Err(Error::NonFinite {
                    sentence: si,
                    layer,
                    token,
                    dim: pos % self.dim,
                });
            }
        }
        Ok(())
    }

    /// A new dump holding the given sentences (in the given order).
    pub fn subset(&self, indices: &[usize]) -> RepresentationDump {
        RepresentationDump {
            rep_kind: self.rep_kind,
            n_layers: self.n_layers,
            dim: self.dim,
            sentences: indices.iter().map(|&i| self.sentences[i].clone()).collect(),
            manifest: self.manifest.clone(),
        }
    }
}

/// Pooled features with labels; each column remembers the `(layer, neuron)` it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureMatrix {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub feature_origin: Vec<(usize, usize)>,
    pub n_classes: usize,
}

impl LabeledFeatureMatrix {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        feature_origin: Vec<(usize, usize)>,
        n_classes: usize,
    ) -> Result<Self> {
        if features.ncols() != feature_origin.len() {
            return Err(Error::DimensionMismatch {
                expected: feature_origin.len(),
                found: features.ncols(),
            });
        }
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                found: features.nrows(),
            });
        }
        if n_classes < 2 {
            return Err(Error::invalid("n_classes must be at least 2"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(Self {
            features,
            labels,
            feature_origin,
            n_classes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_reports_nonfinite_position() {
        let mut dump = tiny_dump();
        dump.sentences[1].data[3 + 1] = f32::INFINITY;
        match dump.validate() {
            Err(Error::NonFinite { sentence, layer, token, dim }) => {
                assert_eq!((sentence, layer, token, dim), (1, 1, 0, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_label_out_of_range() {
        let mut dump = tiny_dump();
        dump.sentences[0].label = 2;
        assert!(matches!(dump.validate(), Err(Error::InvalidDump(_))));
    }

    #[test]
    fn token_accessor_matches_layout() {
        let dump = tiny_dump();
        let s = &dump.sentences[0];
        assert_eq!(s.token(1, 1, 3), &[9.0, 10.0, 11.0]);
        assert_eq!(s.layer(0, 3).len(), 6);
    }

    #[test]
    fn feature_matrix_checks_shapes() {
        let err = LabeledFeatureMatrix::new(Array2::zeros((2, 3)), vec![0, 1], vec![(0, 0)], 2);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let err = LabeledFeatureMatrix::new(Array2::zeros((2, 1)), vec![0, 2], vec![(0, 0)], 2);
        assert!(err.is_err());
    }

    fn tiny_dump() -> RepresentationDump {
        let s0 = SentenceRecord {
            n_tokens: 2,
            label: 0,
            data: (0..12).map(|v| v as f32).collect(),
        };
        let s1 = SentenceRecord {
            n_tokens: 1,
            label: 1,
            data: (0..6).map(|v| v as f32).collect(),
        };
        RepresentationDump {
            rep_kind: RepKind::HiddenStates,
            n_layers: 2,
            dim: 3,
            sentences: vec![s0, s1],
            manifest: DumpManifest::new("m", "d", Split::Train, 2),
        }
    }
}

//! Seeded synthetic dumps with planted label-carrying neurons.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DumpManifest, RepKind, RepresentationDump, SentenceRecord, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_layers: usize,
    pub dim: usize,
    pub n_sentences: usize,
    /// Token counts are drawn uniformly from `tokens_min..=tokens_max`.
    pub tokens_min: usize,
    pub tokens_max: usize,
    /// layer -> planted neuron indices
    pub planted: BTreeMap<usize, Vec<usize>>,
    pub signal_strength: f64,
    pub noise_std: f64,
    /// Per-layer override of `signal_strength`.
    #[serde(default)]
    pub layer_strength: BTreeMap<usize, f64>,
    #[serde(default = "default_rep_kind")]
    pub rep_kind: RepKind,
}

fn default_rep_kind() -> RepKind {
    RepKind::HiddenStates
}

impl SyntheticConfig {
    /// `n_layers` x `dim` with the same planted neurons in every listed layer.
    pub fn planted_in_layers(
        n_layers: usize,
        dim: usize,
        n_sentences: usize,
        layers: impl IntoIterator<Item = usize>,
        neurons: &[usize],
        signal_strength: f64,
    ) -> Self {
        Self {
            n_layers,
            dim,
            n_sentences,
            tokens_min: 1,
            tokens_max: 6,
            planted: layers.into_iter().map(|l| (l, neurons.to_vec())).collect(),
            signal_strength,
            noise_std: 1.0,
            layer_strength: BTreeMap::new(),
            rep_kind: RepKind::HiddenStates,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.dim == 0 || self.n_sentences == 0 {
            return Err(Error::invalid("n_layers, dim and n_sentences must be positive"));
        }
        if self.tokens_min == 0 || self.tokens_max < self.tokens_min {
            return Err(Error::invalid("token range must satisfy 1 <= tokens_min <= tokens_max"));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return Err(Error::invalid("signal_strength must be finite and >= 0"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be finite and >= 0"));
        }
        for (&layer, neurons) in &self.planted {
            if layer >= self.n_layers {
                return Err(Error::invalid(format!(
                    "planted layer {layer} >= n_layers {}",
                    self.n_layers
                )));
            }
            if let Some(&n) = neurons.iter().find(|&&n| n >= self.dim) {
                return Err(Error::invalid(format!("planted index {n} >= dim {}", self.dim)));
            }
        }
        for (&layer, &s) in &self.layer_strength {
            if layer >= self.n_layers || !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("invalid layer_strength entry {layer} -> {s}")));
            }
        }
        Ok(())
    }

    fn strength(&self, layer: usize) -> f64 {
        self.layer_strength
            .get(&layer)
            .copied()
            .unwrap_or(self.signal_strength)
    }
}

/// Background values are `noise_std * z` with `z ~ N(0, 1)`; every token of a
/// planted neuron is shifted by `+s` for label 1 and `-s` for label 0.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<RepresentationDump> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // shift per (layer, neuron) for a label-1 sentence
    let mut shift = vec![0.0f64; config.n_layers * config.dim];
    for (&layer, neurons) in &config.planted {
        for &n in neurons {
            shift[layer * config.dim + n] = config.strength(layer);
        }
    }

    let mut sentences = Vec::with_capacity(config.n_sentences);
    for _ in 0..config.n_sentences {
        let label = usize::from(rng.random_bool(0.5));
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let n_tokens = rng.random_range(config.tokens_min..=config.tokens_max);
        let mut data = Vec::with_capacity(config.n_layers * n_tokens * config.dim);
        for layer in 0..config.n_layers {
            let row_shift = &shift[layer * config.dim..(layer + 1) * config.dim];
            for _ in 0..n_tokens {
                for &s in row_shift {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push((config.noise_std * z + sign * s) as f32);
                }
            }
        }
        sentences.push(SentenceRecord {
            n_tokens,
            label,
            data,
        });
    }

    let mut manifest = DumpManifest::new("synthetic", "planted", Split::Train, 2);
    manifest.extra.insert("seed".into(), seed.to_string());
    manifest
        .extra
        .insert("signal_strength".into(), config.signal_strength.to_string());
    manifest.extra.insert("noise_std".into(), config.noise_std.to_string());

    Ok(RepresentationDump {
        rep_kind: config.rep_kind,
        n_layers: config.n_layers,
        dim: config.dim,
        sentences,
        manifest,
    })
}

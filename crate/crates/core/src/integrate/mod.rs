//! Cross-layer integration: concatenate the salient neurons of several layers
//! into one feature vector and train a classification head on it. Also hosts
//! early exit, token-wise transfer and the two ablation baselines.

mod ablation;
mod metrics;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{check_magic, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::pooling::{pooled_layer, PoolingStrategy};
use crate::probe::{argmax_rows, predict_proba_raw, train_head, train_probe_auto, ProbeModel, SolverSettings};
use crate::repstore::{LabeledFeatureMatrix, RepKind, RepresentationDump};
use crate::sparsify::SalientSet;

pub use ablation::{
    ablation_random_selection, ablation_single_layer, random_selection, RandomAblation, SingleLayerReport,
};
pub use metrics::{compute_metrics, MetricsReport, MetricsRow, PrimaryMetric, METRICS_CSV_HEADER};

pub const CLASSIFIER_MAGIC: &[u8; 8] = b"SPINHEAD";
pub const CLASSIFIER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadSettings {
    pub solver: SolverSettings,
    /// Ridge coefficient of the head; 0 gives the plain cross-entropy fit.
    pub head_l2: f64,
}

impl Default for HeadSettings {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            head_l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedClassifier {
    pub pooling: PoolingStrategy,
    pub rep_kind: RepKind,
    /// Layers whose neurons feed the head, ascending.
    pub layers: Vec<usize>,
    pub layer_cutoff: usize,
    pub salient: SalientSet,
    pub head: ProbeModel,
    pub feature_origin: Vec<(usize, usize)>,
    pub dim: usize,
}

/// Every layer of a dump pooled once.
pub struct PooledDump {
    pub pooling: PoolingStrategy,
    pub rep_kind: RepKind,
    pub dim: usize,
    pub layers: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl PooledDump {
    pub fn new(dump: &RepresentationDump, pooling: PoolingStrategy) -> Result<Self> {
        if dump.sentences.is_empty() {
            return Err(Error::EmptyDump);
        }
        let layers = (0..dump.n_layers)
            .into_par_iter()
            .map(|l| pooled_layer(dump, pooling, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            pooling,
            rep_kind: dump.rep_kind,
            dim: dump.dim,
            layers,
            labels: dump.labels(),
            n_classes: dump.n_classes(),
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_matrix(&self, layer: usize) -> Result<LabeledFeatureMatrix> {
        let x = self.layers.get(layer).ok_or(Error::LayerOutOfRange {
            layer,
            n_layers: self.layers.len(),
        })?;
        LabeledFeatureMatrix::new(
            x.clone(),
            self.labels.clone(),
            (0..self.dim).map(|j| (layer, j)).collect(),
            self.n_classes,
        )
    }

    /// Selected columns of the given layers, layer-major, rank order within a layer.
    pub fn assemble(&self, salient: &SalientSet, layers: &[usize]) -> Result<LabeledFeatureMatrix> {
        let mut origin = Vec::new();
        for &l in layers {
            if l >= self.layers.len() {
                return Err(Error::LayerOutOfRange {
                    layer: l,
                    n_layers: self.layers.len(),
                });
            }
            let idx = salient
                .indices(l)
                .ok_or_else(|| Error::invalid(format!("salient set is missing layer {l}")))?;
            if let Some(&bad) = idx.iter().find(|&&j| j >= self.dim) {
                return Err(Error::invalid(format!("selected neuron {bad} >= dim {}", self.dim)));
            }
            origin.extend(idx.into_iter().map(|j| (l, j)));
        }
        let n = self.labels.len();
        let mut x = Array2::zeros((n, origin.len()));
        for (c, &(l, j)) in origin.iter().enumerate() {
            x.column_mut(c).assign(&self.layers[l].column(j));
        }
        LabeledFeatureMatrix::new(x, self.labels.clone(), origin, self.n_classes)
    }
}

/// One Lasso probe per layer, in layer order.
pub fn train_layer_probes(pooled: &PooledDump, lambda: f64, settings: &SolverSettings) -> Result<Vec<ProbeModel>> {
    (0..pooled.n_layers())
        .into_par_iter()
        .map(|l| train_probe_auto(&pooled.layer_matrix(l)?, lambda, settings))
        .collect()
}

fn cutoff_layers(n_layers: usize, layer_cutoff: usize) -> Result<Vec<usize>> {
    if layer_cutoff == 0 || layer_cutoff > n_layers {
        return Err(Error::invalid(format!(
            "layer cutoff {layer_cutoff} outside 1..={n_layers}"
        )));
    }
    Ok((0..layer_cutoff).collect())
}

pub fn assemble_features(
    dump: &RepresentationDump,
    salient: &SalientSet,
    pooling: PoolingStrategy,
    layer_cutoff: usize,
) -> Result<LabeledFeatureMatrix> {
    let layers = cutoff_layers(dump.n_layers, layer_cutoff)?;
    PooledDump::new(dump, pooling)?.assemble(salient, &layers)
}

/// Trains a head on the selected neurons of `layers` from pre-pooled data.
pub fn train_on_layers(
    pooled: &PooledDump,
    salient: &SalientSet,
    layers: &[usize],
    settings: &HeadSettings,
) -> Result<IntegratedClassifier> {
    let features = pooled.assemble(salient, layers)?;
    let head = train_head(&features, settings.head_l2, &settings.solver)?;
    Ok(IntegratedClassifier {
        pooling: pooled.pooling,
        rep_kind: pooled.rep_kind,
        layers: layers.to_vec(),
        layer_cutoff: layers.iter().max().map_or(0, |m| m + 1),
        salient: salient.restrict(layers)?,
        head,
        feature_origin: features.feature_origin,
        dim: pooled.dim,
    })
}

pub fn train_integrated(
    dump_train: &RepresentationDump,
    salient: &SalientSet,
    pooling: PoolingStrategy,
    layer_cutoff: usize,
    settings: &HeadSettings,
) -> Result<IntegratedClassifier> {
    let layers = cutoff_layers(dump_train.n_layers, layer_cutoff)?;
    train_on_layers(&PooledDump::new(dump_train, pooling)?, salient, &layers, settings)
}

impl IntegratedClassifier {
    pub fn n_features(&self) -> usize {
        self.feature_origin.len()
    }

    fn check_pooled(&self, pooled: &PooledDump) -> Result<()> {
        if pooled.rep_kind != self.rep_kind {
            return Err(Error::invalid(format!(
                "classifier was trained on {} but the dump holds {}",
                self.rep_kind, pooled.rep_kind
            )));
        }
        if pooled.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: pooled.dim,
            });
        }
        if pooled.pooling != self.pooling {
            return Err(Error::invalid("pooled data uses a different pooling strategy"));
        }
        Ok(())
    }

    pub fn predict_proba_pooled(&self, pooled: &PooledDump) -> Result<Array2<f64>> {
        self.check_pooled(pooled)?;
        let features = pooled.assemble(&self.salient, &self.layers)?;
        predict_proba_raw(&self.head, &features.features)
    }

    pub fn predict_proba(&self, dump: &RepresentationDump) -> Result<Array2<f64>> {
        self.predict_proba_pooled(&PooledDump::new(dump, self.pooling)?)
    }

    pub fn evaluate_pooled(&self, pooled: &PooledDump) -> Result<MetricsReport> {
        let predicted = argmax_rows(&self.predict_proba_pooled(pooled)?);
        compute_metrics(&predicted, &pooled.labels)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(CLASSIFIER_MAGIC);
        w.u32(CLASSIFIER_VERSION);
        w.u8(self.rep_kind.code());
        w.u8(self.pooling.code());
        w.len_u32(self.dim)?;
        w.len_u32(self.layer_cutoff)?;
        w.len_u32(self.layers.len())?;
        for &l in &self.layers {
            w.len_u32(l)?;
        }
        self.salient.write_into(&mut w)?;
        let head = self.head.encode()?;
        w.len_u32(head.len())?;
        w.bytes(&head);
        Ok(w.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        check_magic(&mut r, CLASSIFIER_MAGIC)?;
        let version = r.u32()?;
        if version != CLASSIFIER_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let kind = r.u8()?;
        let rep_kind = RepKind::from_code(kind).ok_or_else(|| Error::InvalidModel(format!("rep_kind code {kind}")))?;
        let pool = r.u8()?;
        let pooling =
            PoolingStrategy::from_code(pool).ok_or_else(|| Error::InvalidModel(format!("pooling code {pool}")))?;
        let dim = r.u32()? as usize;
        let layer_cutoff = r.u32()? as usize;
        let n = r.u32()? as usize;
        r.ensure(n.checked_mul(4))?;
        let layers = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let salient = SalientSet::read_from(&mut r)?;
        let head_len = r.u32()? as usize;
        let head = ProbeModel::decode(r.take(head_len)?)?;
        r.finish()?;
        let feature_origin: Vec<(usize, usize)> = layers
            .iter()
            .flat_map(|&l| {
                salient
                    .indices(l)
                    .unwrap_or_default()
                    .into_iter()
                    .map(move |j| (l, j))
            })
            .collect();
        if feature_origin.len() != head.dim() {
            return Err(Error::InvalidModel(format!(
                "head expects {} inputs, selection provides {}",
                head.dim(),
                feature_origin.len()
            )));
        }
        Ok(Self {
            pooling,
            rep_kind,
            layers,
            layer_cutoff,
            salient,
            head,
            feature_origin,
            dim,
        })
    }
}

pub fn evaluate(clf: &IntegratedClassifier, dump_eval: &RepresentationDump) -> Result<MetricsReport> {
    if dump_eval.sentences.is_empty() {
        return Err(Error::EmptyDump);
    }
    clf.evaluate_pooled(&PooledDump::new(dump_eval, clf.pooling)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyExitPoint {
    pub fraction: f64,
    pub layer_cutoff: usize,
    pub n_features: usize,
    pub report: MetricsReport,
}

/// `max(1, round(fraction * n_layers))`.
pub fn cutoff_for_fraction(fraction: f64, n_layers: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    Ok(((fraction * n_layers as f64).round() as usize).clamp(1, n_layers))
}

/// Truncates the selection to the bottom layers and retrains the head per cutoff.
pub fn early_exit_curve(
    dump_train: &RepresentationDump,
    dump_eval: &RepresentationDump,
    salient: &SalientSet,
    pooling: PoolingStrategy,
    fractions: &[f64],
    settings: &HeadSettings,
) -> Result<Vec<EarlyExitPoint>> {
    if fractions.is_empty() {
        return Err(Error::invalid("no early-exit fractions given"));
    }
    let cutoffs = fractions
        .iter()
        .map(|&f| cutoff_for_fraction(f, dump_train.n_layers))
        .collect::<Result<Vec<_>>>()?;
    let train = PooledDump::new(dump_train, pooling)?;
    let eval = PooledDump::new(dump_eval, pooling)?;
    fractions
        .par_iter()
        .zip(cutoffs.par_iter())
        .map(|(&fraction, &k)| {
            let layers: Vec<usize> = (0..k).collect();
            let clf = train_on_layers(&train, salient, &layers, settings)?;
            Ok(EarlyExitPoint {
                fraction,
                layer_cutoff: k,
                n_features: clf.n_features(),
                report: clf.evaluate_pooled(&eval)?,
            })
        })
        .collect()
}

/// Per-token class probabilities of one sentence, skipping the pooling step.
pub fn predict_tokenwise(
    clf: &IntegratedClassifier,
    dump: &RepresentationDump,
    sentence: usize,
) -> Result<Vec<Vec<f64>>> {
    if !matches!(clf.pooling, PoolingStrategy::Max | PoolingStrategy::Avg) {
        return Err(Error::invalid(format!(
            "token-wise prediction needs a max- or avg-pooled head, got {}",
            clf.pooling
        )));
    }
    if dump.rep_kind != clf.rep_kind {
        return Err(Error::invalid("dump representation kind differs from the classifier's"));
    }
    if dump.dim != clf.dim {
        return Err(Error::DimensionMismatch {
            expected: clf.dim,
            found: dump.dim,
        });
    }
    if clf.layer_cutoff > dump.n_layers {
        return Err(Error::LayerOutOfRange {
            layer: clf.layer_cutoff - 1,
            n_layers: dump.n_layers,
        });
    }
    let s = dump.sentences.get(sentence).ok_or_else(|| {
        Error::invalid(format!(
            "sentence {sentence} out of range ({} sentences)",
            dump.sentences.len()
        ))
    })?;
    let x = Array2::from_shape_fn((s.n_tokens, clf.feature_origin.len()), |(t, c)| {
        let (l, j) = clf.feature_origin[c];
        f64::from(s.token(l, t, dump.dim)[j])
    });
    let proba = predict_proba_raw(&clf.head, &x)?;
    Ok(rows_to_vecs(proba.view()))
}

fn rows_to_vecs(a: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

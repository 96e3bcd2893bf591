//! Ablation baselines: random neuron selection in place of probe-guided
//! selection, and single-layer heads in place of cross-layer integration.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{train_on_layers, HeadSettings, MetricsReport, PooledDump, PrimaryMetric};
use crate::error::{Error, Result};
use crate::pooling::PoolingStrategy;
use crate::repstore::RepresentationDump;
use crate::sparsify::SalientSet;

/// `k` distinct neurons per layer drawn uniformly without replacement, one
/// independent draw per layer, listed in ascending index order.
pub fn random_selection(n_layers: usize, dim: usize, k: usize, seed: u64) -> Result<SalientSet> {
    if k == 0 || k > dim {
        return Err(Error::invalid(format!("k_per_layer must lie in 1..={dim}, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight = 1.0 / k as f64;
    let per_layer: BTreeMap<usize, Vec<(usize, f64)>> = (0..n_layers)
        .map(|l| {
            let mut idx = sample(&mut rng, dim, k).into_vec();
            idx.sort_unstable();
            (l, idx.into_iter().map(|i| (i, weight)).collect())
        })
        .collect();
    Ok(SalientSet { eta: 1.0, per_layer })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomAblation {
    pub selection: SalientSet,
    pub n_features: usize,
    pub report: MetricsReport,
}

pub fn ablation_random_selection(
    dump_train: &RepresentationDump,
    dump_eval: &RepresentationDump,
    pooling: PoolingStrategy,
    k_per_layer: usize,
    seed: u64,
    settings: &HeadSettings,
) -> Result<RandomAblation> {
    let selection = random_selection(dump_train.n_layers, dump_train.dim, k_per_layer, seed)?;
    let train = PooledDump::new(dump_train, pooling)?;
    let eval = PooledDump::new(dump_eval, pooling)?;
    let layers: Vec<usize> = (0..dump_train.n_layers).collect();
    let clf = train_on_layers(&train, &selection, &layers, settings)?;
    Ok(RandomAblation {
        n_features: clf.n_features(),
        report: clf.evaluate_pooled(&eval)?,
        selection,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleLayerReport {
    /// `(layer, n_features, metrics)` for every layer.
    pub per_layer: Vec<(usize, usize, MetricsReport)>,
    /// Highest metric; ties go to the lower layer.
    pub best_layer: usize,
}

pub fn ablation_single_layer(
    dump_train: &RepresentationDump,
    dump_eval: &RepresentationDump,
    salient: &SalientSet,
    pooling: PoolingStrategy,
    settings: &HeadSettings,
    metric: PrimaryMetric,
) -> Result<SingleLayerReport> {
    let train = PooledDump::new(dump_train, pooling)?;
    let eval = PooledDump::new(dump_eval, pooling)?;
    let per_layer = (0..dump_train.n_layers)
        .into_par_iter()
        .map(|l| {
            let clf = train_on_layers(&train, salient, &[l], settings)?;
            Ok((l, clf.n_features(), clf.evaluate_pooled(&eval)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let best_layer = per_layer
        .iter()
        .fold(None::<(usize, f64)>, |best, &(l, _, m)| match best {
            Some((_, v)) if v >= m.get(metric) => best,
            _ => Some((l, m.get(metric))),
        })
        .map(|(l, _)| l)
        .ok_or_else(|| Error::invalid("dump has no layers"))?;
    Ok(SingleLayerReport { per_layer, best_layer })
}

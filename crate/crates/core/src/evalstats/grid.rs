use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{CellConfig, GridSpace, PipelineSettings};
use crate::error::{Error, Result};
use crate::integrate::{train_layer_probes, train_on_layers, IntegratedClassifier, MetricsReport, MetricsRow, PooledDump};
use crate::pooling::PoolingStrategy;
use crate::repstore::{RepKind, RepresentationDump};
use crate::sparsify::build_salient_set;

pub const GRID_CSV_HEADER: &str = "rep_kind,pooling,lambda,eta,layer_cutoff,n_features,accuracy,macro_f1,val_or_test";

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub config: CellConfig,
    pub layer_cutoff: usize,
    pub n_features: usize,
    pub metrics: MetricsReport,
    /// The ranking metric read off `metrics`.
    pub score: f64,
    /// Every probe of the cell and its head reached the tolerance.
    pub converged: bool,
}

impl GridRow {
    pub fn metrics_row(&self) -> MetricsRow {
        MetricsRow {
            rep_kind: self.config.rep_kind,
            pooling: self.config.pooling,
            lambda: Some(self.config.lambda),
            eta: self.config.eta,
            layer_cutoff: self.layer_cutoff,
            n_features: self.n_features,
            metrics: self.metrics,
        }
    }

    pub fn to_csv(&self, val_or_test: &str) -> String {
        format!("{},{val_or_test}", self.metrics_row().to_csv())
    }
}

/// A cell whose probes left some layer without any nonzero weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedCell {
    pub config: CellConfig,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    /// Best first; ties broken by the cell order of [`CellConfig::cmp_key`].
    pub ranked: Vec<GridRow>,
    /// In grid order; these rank below every evaluated cell.
    pub skipped: Vec<SkippedCell>,
    pub best: IntegratedClassifier,
}

impl GridOutcome {
    pub fn best_row(&self) -> &GridRow {
        &self.ranked[0]
    }

    pub fn to_csv(&self, val_or_test: &str) -> String {
        let mut out = String::from(GRID_CSV_HEADER);
        out.push('\n');
        for row in &self.ranked {
            out.push_str(&row.to_csv(val_or_test));
            out.push('\n');
        }
        out
    }

    pub fn skipped_csv(&self) -> String {
        let mut out = String::from("rep_kind,pooling,lambda,eta,reason\n");
        for s in &self.skipped {
            let c = s.config;
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.rep_kind,
                c.pooling,
                c.lambda,
                c.eta,
                s.reason.replace(',', ";")
            ));
        }
        out
    }
}

enum CellResult {
    Ran(GridRow, Box<IntegratedClassifier>),
    Skipped(SkippedCell),
}

fn dump_for<'a>(dumps: &'a BTreeMap<RepKind, RepresentationDump>, kind: RepKind, which: &str) -> Result<&'a RepresentationDump> {
    let dump = dumps
        .get(&kind)
        .ok_or_else(|| Error::invalid(format!("no {which} dump for rep_kind {kind}")))?;
    if dump.rep_kind != kind {
        return Err(Error::InvalidDump(format!(
            "{which} dump registered as {kind} holds {}",
            dump.rep_kind
        )));
    }
    Ok(dump)
}

/// Trains and evaluates every cell of `space`. Probes depend on
/// (rep_kind, pooling, lambda) only and are shared across the eta axis.
pub fn grid_search(
    train: &BTreeMap<RepKind, RepresentationDump>,
    val: &BTreeMap<RepKind, RepresentationDump>,
    space: &GridSpace,
    settings: &PipelineSettings,
) -> Result<GridOutcome> {
    space.validate()?;
    settings.validate()?;
    for &kind in &space.rep_kinds {
        let (t, v) = (dump_for(train, kind, "train")?, dump_for(val, kind, "validation")?);
        if t.n_layers != v.n_layers || t.dim != v.dim {
            return Err(Error::DimensionMismatch {
                expected: t.n_layers * t.dim,
                found: v.n_layers * v.dim,
            });
        }
    }

    let pooled_keys: Vec<(RepKind, PoolingStrategy)> = space
        .rep_kinds
        .iter()
        .flat_map(|&k| space.poolings.iter().map(move |&p| (k, p)))
        .collect();
    let pooled: Vec<(PooledDump, PooledDump)> = pooled_keys
        .par_iter()
        .map(|&(k, p)| Ok((PooledDump::new(&train[&k], p)?, PooledDump::new(&val[&k], p)?)))
        .collect::<Result<_>>()?;

    let groups: Vec<(usize, f64)> = (0..pooled_keys.len())
        .flat_map(|i| space.lambdas.iter().map(move |&l| (i, l)))
        .collect();
    let per_group: Vec<Vec<CellResult>> = groups
        .par_iter()
        .map(|&(i, lambda)| {
            let (rep_kind, pooling) = pooled_keys[i];
            let (tr, va) = &pooled[i];
            let probes = train_layer_probes(tr, lambda, &settings.probe_solver)?;
            let probes_converged = probes.iter().all(|p| p.converged);
            let layers: Vec<usize> = (0..tr.n_layers()).collect();
            space
                .etas
                .iter()
                .map(|&eta| {
                    let config = CellConfig { rep_kind, pooling, lambda, eta };
                    let salient = match build_salient_set(&probes, eta) {
                        Ok(s) => s,
                        Err(e @ Error::NoInformativeNeurons { .. }) => {
                            return Ok(CellResult::Skipped(SkippedCell {
                                config,
                                reason: e.to_string(),
                            }))
                        }
                        Err(e) => return Err(e),
                    };
                    let clf = train_on_layers(tr, &salient, &layers, &settings.head)?;
                    let metrics = clf.evaluate_pooled(va)?;
                    let row = GridRow {
                        config,
                        layer_cutoff: clf.layer_cutoff,
                        n_features: clf.n_features(),
                        metrics,
                        score: metrics.get(settings.metric),
                        converged: probes_converged && clf.head.converged,
                    };
                    Ok(CellResult::Ran(row, Box::new(clf)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut ran = Vec::new();
    let mut skipped = Vec::new();
    for cell in per_group.into_iter().flatten() {
        match cell {
            CellResult::Ran(row, clf) => ran.push((row, clf)),
            CellResult::Skipped(s) => skipped.push(s),
        }
    }
    ran.sort_by(|(a, _), (b, _)| b.score.total_cmp(&a.score).then_with(|| a.config.cmp_key(&b.config)));
    let mut ran = ran.into_iter();
    let (first, best) = ran.next().ok_or(Error::NoInformativeNeurons { layer: None })?;
    let mut ranked = vec![first];
    ranked.extend(ran.map(|(row, _)| row));
    Ok(GridOutcome {
        ranked,
        skipped,
        best: *best,
    })
}

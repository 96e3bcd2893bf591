use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{t_cdf, CellConfig, PipelineSettings};
use crate::error::{Error, Result};
use crate::integrate::{train_layer_probes, train_on_layers, PooledDump};
use crate::repstore::RepresentationDump;
use crate::sparsify::build_salient_set;

const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvSettings {
    pub k: usize,
    pub seed: u64,
    /// Constant the fold metrics are tested against, on the metric's [0, 1] scale.
    pub baseline: f64,
    /// Deal each class round-robin over the folds instead of plain chunking.
    pub stratify: bool,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            baseline: 0.5,
            stratify: false,
        }
    }
}

/// Seeded shuffle split into `k` disjoint folds whose sizes differ by at
/// most one. Indices inside a fold are ascending.
pub fn fold_partition(labels: &[usize], k: usize, seed: u64, stratify: bool) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} available sentences")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    if stratify {
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut next = 0;
        for class in 0..n_classes {
            for &i in order.iter().filter(|&&i| labels[i] == class) {
                folds[next % k].push(i);
                next += 1;
            }
        }
    } else {
        let (base, extra) = (n / k, n % k);
        let mut start = 0;
        for (f, fold) in folds.iter_mut().enumerate() {
            let len = base + usize::from(f < extra);
            fold.extend_from_slice(&order[start..start + len]);
            start += len;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: u32,
    /// One-sided, alternative: mean > baseline.
    pub p_value: f64,
}

pub fn one_sample_t_test(samples: &[f64], baseline: f64) -> Result<TTest> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid("t-test needs at least two samples"));
    }
    let (mean, s) = mean_and_std(samples);
    let df = (n - 1) as u32;
    let diff = mean - baseline;
    let t = if s > 0.0 {
        diff / (s / (n as f64).sqrt())
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    // upper tail through the lower one so small p keep their precision
    let p_value = t_cdf(-t, df)?;
    Ok(TTest { t, df, p_value })
}

/// Identical samples get exactly zero spread; summation rounding would
/// otherwise leave a spurious nonzero deviation.
fn mean_and_std(samples: &[f64]) -> (f64, f64) {
    if samples.iter().all(|&x| x == samples[0]) {
        return (samples[0], 0.0);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (samples.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CVResult {
    pub fold_metrics: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub ci_halfwidth: f64,
    pub t: f64,
    pub df: u32,
    pub p_value: f64,
    pub baseline: f64,
}

impl CVResult {
    pub fn from_fold_metrics(fold_metrics: Vec<f64>, baseline: f64) -> Result<Self> {
        let test = one_sample_t_test(&fold_metrics, baseline)?;
        let k = fold_metrics.len() as f64;
        let (mean, std) = mean_and_std(&fold_metrics);
        Ok(Self {
            ci_halfwidth: Z_95 * std / k.sqrt(),
            mean,
            std,
            t: test.t,
            df: test.df,
            p_value: test.p_value,
            baseline,
            fold_metrics,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let folds: Vec<String> = self.fold_metrics.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "folds: {}", folds.join(" "));
        let _ = writeln!(out, "mean: {} ± {}", self.mean, self.ci_halfwidth);
        let _ = writeln!(out, "baseline: {}", self.baseline);
        let _ = writeln!(out, "t: {}", self.t);
        let _ = writeln!(out, "df: {}", self.df);
        let _ = writeln!(out, "p: {}", self.p_value);
        out
    }
}

/// Runs the full pipeline (probes, selection, head) on each training
/// complement and scores the held-out fold.
pub fn cross_validate(
    dump_all: &RepresentationDump,
    config: &CellConfig,
    settings: &PipelineSettings,
    cv: &CvSettings,
) -> Result<CVResult> {
    settings.validate()?;
    if dump_all.rep_kind != config.rep_kind {
        return Err(Error::invalid(format!(
            "config asks for {} but the dump holds {}",
            config.rep_kind, dump_all.rep_kind
        )));
    }
    if !cv.baseline.is_finite() {
        return Err(Error::invalid("baseline must be finite"));
    }
    let folds = fold_partition(&dump_all.labels(), cv.k, cv.seed, cv.stratify)?;
    let n = dump_all.n_sentences();
    let metrics = folds
        .par_iter()
        .map(|held_out| {
            let mut in_fold = vec![false; n];
            for &i in held_out {
                in_fold[i] = true;
            }
            let train_idx: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
            let train = PooledDump::new(&dump_all.subset(&train_idx), config.pooling)?;
            let eval = PooledDump::new(&dump_all.subset(held_out), config.pooling)?;
            let probes = train_layer_probes(&train, config.lambda, &settings.probe_solver)?;
            let salient = build_salient_set(&probes, config.eta)?;
            let layers: Vec<usize> = (0..train.n_layers()).collect();
            let clf = train_on_layers(&train, &salient, &layers, &settings.head)?;
            Ok(clf.evaluate_pooled(&eval)?.get(settings.metric))
        })
        .collect::<Result<Vec<f64>>>()?;
    CVResult::from_fold_metrics(metrics, cv.baseline)
}

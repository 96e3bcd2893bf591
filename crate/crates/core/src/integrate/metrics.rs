use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::PoolingStrategy;
use crate::repstore::RepKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimaryMetric {
    #[default]
    Accuracy,
    MacroF1,
}

impl PrimaryMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            PrimaryMetric::Accuracy => "accuracy",
            PrimaryMetric::MacroF1 => "macro_f1",
        }
    }
}

impl fmt::Display for PrimaryMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrimaryMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(PrimaryMetric::Accuracy),
            "macro_f1" => Ok(PrimaryMetric::MacroF1),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn get(&self, metric: PrimaryMetric) -> f64 {
        match metric {
            PrimaryMetric::Accuracy => self.accuracy,
            PrimaryMetric::MacroF1 => self.macro_f1,
        }
    }
}

/// Accuracy and macro-F1; the macro average runs over every class that occurs
/// in either the truth or the predictions.
pub fn compute_metrics(predicted: &[usize], truth: &[usize]) -> Result<MetricsReport> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyDump);
    }
    let n = truth.len();
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    let classes: BTreeSet<usize> = predicted.iter().chain(truth).copied().collect();
    let mut f1_sum = 0.0;
    for &c in &classes {
        let tp = predicted.iter().zip(truth).filter(|&(&p, &t)| p == c && t == c).count() as f64;
        let fp = predicted.iter().zip(truth).filter(|&(&p, &t)| p == c && t != c).count() as f64;
        let fn_ = predicted.iter().zip(truth).filter(|&(&p, &t)| p != c && t == c).count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        f1_sum += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    Ok(MetricsReport {
        accuracy: correct as f64 / n as f64,
        macro_f1: f1_sum / classes.len() as f64,
        n_samples: n,
    })
}

pub const METRICS_CSV_HEADER: &str = "rep_kind,pooling,lambda,eta,layer_cutoff,n_features,accuracy,macro_f1";

/// One result row in the shared CSV schema.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub rep_kind: RepKind,
    pub pooling: PoolingStrategy,
    /// Probe coefficient behind the selection; `None` for random selection.
    pub lambda: Option<f64>,
    pub eta: f64,
    pub layer_cutoff: usize,
    pub n_features: usize,
    pub metrics: MetricsReport,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.rep_kind,
            self.pooling,
            self.lambda.map(|l| l.to_string()).unwrap_or_default(),
            self.eta,
            self.layer_cutoff,
            self.n_features,
            self.metrics.accuracy,
            self.metrics.macro_f1
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = compute_metrics(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap();
        assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn all_positive_on_balanced_set() {
        let m = compute_metrics(&[1, 1, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        // class 0: F1 = 0; class 1: precision 0.5, recall 1 -> 2/3
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(compute_metrics(&[], &[]).is_err());
        assert!(compute_metrics(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn csv_row_format() {
        let row = MetricsRow {
            rep_kind: RepKind::Activations,
            pooling: PoolingStrategy::Avg,
            lambda: Some(0.5),
            eta: 0.4,
            layer_cutoff: 12,
            n_features: 37,
            metrics: MetricsReport {
                accuracy: 0.75,
                macro_f1: 0.7,
                n_samples: 8,
            },
        };
        assert_eq!(row.to_csv(), "activations,avg,0.5,0.4,12,37,0.75,0.7");
        let random = MetricsRow { lambda: None, ..row };
        assert_eq!(random.to_csv(), "activations,avg,,0.4,12,37,0.75,0.7");
    }
}

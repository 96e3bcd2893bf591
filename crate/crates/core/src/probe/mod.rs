//! L1-regularized logistic probes (binary and multinomial) on standardized
//! pooled features.

mod objective;
mod solver;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::codec::{check_magic, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::repstore::LabeledFeatureMatrix;

pub use objective::{Link, LogisticObjective, Params};

/// Columns whose raw standard deviation falls below this are centered only.
pub const STD_FLOOR: f64 = 1e-8;

pub const PROBE_MAGIC: &[u8; 8] = b"SPINPROB";
pub const PROBE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    #[default]
    Backtracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub step: StepRule,
    /// Recorded with results; the backtracking solver itself draws no randomness.
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            rel_tol: 1e-6,
            step: StepRule::Backtracking,
            seed: 0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("rel_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    /// `[1][dim]` for the sigmoid link, `[n_classes][dim]` for softmax.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub lambda: f64,
    /// Ridge coefficient on the weights (zero for probes, `head_l2` for heads).
    pub l2: f64,
    pub feature_mean: Array1<f64>,
    pub feature_std: Array1<f64>,
    /// Layer of the first input column; meaningful for per-layer probes.
    pub layer: usize,
    pub n_classes: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub iterations: usize,
}

impl ProbeModel {
    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn link(&self) -> Link {
        if self.weights.nrows() == 1 {
            Link::Sigmoid
        } else {
            Link::Softmax
        }
    }

    /// Standardizes with the stored training statistics.
    pub fn transform(&self, raw: &Array2<f64>) -> Array2<f64> {
        (raw - &self.feature_mean.view().insert_axis(Axis(0))) / &self.feature_std.view().insert_axis(Axis(0))
    }

    /// Class probabilities for already standardized rows.
    pub(crate) fn proba_standardized(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias.view().insert_axis(Axis(0));
        match self.link() {
            Link::Sigmoid => {
                let mut out = Array2::zeros((x.nrows(), 2));
                for (mut row, &zi) in out.rows_mut().into_iter().zip(z.column(0)) {
                    let p1 = objective::sigmoid(zi);
                    row[0] = 1.0 - p1;
                    row[1] = p1;
                }
                out
            }
            Link::Softmax => {
                for mut row in z.rows_mut() {
                    let lse = objective::log_sum_exp(row.iter().copied());
                    row.mapv_inplace(|v| (v - lse).exp());
                }
                z
            }
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(PROBE_MAGIC);
        w.u32(PROBE_VERSION);
        w.len_u32(self.layer)?;
        w.len_u32(self.n_classes)?;
        w.len_u32(self.weights.nrows())?;
        w.len_u32(self.dim())?;
        w.f64(self.lambda);
        w.f64(self.l2);
        w.u8(u8::from(self.converged));
        w.f64(self.final_objective);
        w.len_u32(self.iterations)?;
        for v in self
            .weights
            .iter()
            .chain(self.bias.iter())
            .chain(self.feature_mean.iter())
            .chain(self.feature_std.iter())
        {
            w.f64(*v);
        }
        Ok(w.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let m = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(m)
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        check_magic(r, PROBE_MAGIC)?;
        let version = r.u32()?;
        if version != PROBE_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let layer = r.u32()? as usize;
        let n_classes = r.u32()? as usize;
        let rows = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if n_classes < 2 || !(rows == 1 && n_classes == 2 || rows == n_classes) {
            return Err(Error::InvalidModel(format!("{rows} weight rows for {n_classes} classes")));
        }
        let lambda = r.f64()?;
        let l2 = r.f64()?;
        let converged = r.u8()? != 0;
        let final_objective = r.f64()?;
        let iterations = r.u32()? as usize;
        let count = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_add(rows + 2 * dim))
            .and_then(|n| n.checked_mul(8));
        r.ensure(count)?;
        let mut read_vec = |n: usize| -> Result<Vec<f64>> { (0..n).map(|_| r.f64()).collect() };
        let weights = Array2::from_shape_vec((rows, dim), read_vec(rows * dim)?)
            .map_err(|e| Error::InvalidModel(e.to_string()))?;
        let bias = Array1::from(read_vec(rows)?);
        let feature_mean = Array1::from(read_vec(dim)?);
        let feature_std = Array1::from(read_vec(dim)?);
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite weights".into()));
        }
        Ok(Self {
            weights,
            bias,
            lambda,
            l2,
            feature_mean,
            feature_std,
            layer,
            n_classes,
            converged,
            final_objective,
            iterations,
        })
    }
}

/// Column statistics of `x`: mean and population standard deviation, with
/// degenerate columns recorded as std 1.
fn column_stats(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mean = x.sum_axis(Axis(0)) / n;
    let mut std = Array1::zeros(x.ncols());
    for (j, col) in x.columns().into_iter().enumerate() {
        let m = mean[j];
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        let s = var.sqrt();
        std[j] = if s < STD_FLOOR { 1.0 } else { s };
    }
    (mean, std)
}

pub fn standardize(features: &LabeledFeatureMatrix) -> Result<(LabeledFeatureMatrix, Array1<f64>, Array1<f64>)> {
    if features.n_rows() < 2 {
        return Err(Error::invalid("standardization needs at least 2 rows"));
    }
    let (mean, std) = column_stats(&features.features);
    let x = (&features.features - &mean.view().insert_axis(Axis(0))) / &std.view().insert_axis(Axis(0));
    let out = LabeledFeatureMatrix {
        features: x,
        ..features.clone()
    };
    Ok((out, mean, std))
}

/// Log-prior intercepts: one logit for the sigmoid link, log-priors for softmax.
fn prior_bias(labels: &[usize], n_classes: usize, link: Link) -> Array1<f64> {
    let n = labels.len() as f64;
    let floor = 0.5 / n;
    let prior = |k: usize| {
        let c = labels.iter().filter(|&&y| y == k).count() as f64 / n;
        c.clamp(floor, 1.0 - floor)
    };
    match link {
        Link::Sigmoid => {
            let p = prior(1);
            Array1::from(vec![(p / (1.0 - p)).ln()])
        }
        Link::Softmax => Array1::from_iter((0..n_classes).map(|k| prior(k).ln())),
    }
}

fn fit(features: &LabeledFeatureMatrix, l1: f64, l2: f64, link: Link, settings: &SolverSettings) -> Result<ProbeModel> {
    settings.validate()?;
    if !(l1 >= 0.0 && l1.is_finite()) {
        return Err(Error::invalid(format!("lambda must be finite and >= 0, got {l1}")));
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::invalid(format!("l2 must be finite and >= 0, got {l2}")));
    }
    if features.n_features() == 0 {
        return Err(Error::invalid("no feature columns to train on"));
    }
    if features.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("feature matrix contains non-finite values"));
    }
    let (std_features, mean, std) = standardize(features)?;
    let n_classes = features.n_classes;
    let obj = LogisticObjective::new(std_features.features.view(), &features.labels, n_classes, link, l2);
    let init = Params {
        weights: Array2::zeros((obj.n_rows(), obj.dim())),
        bias: prior_bias(&features.labels, n_classes, link),
    };
    let out = solver::minimize(&obj, l1, init, settings);
    Ok(ProbeModel {
        weights: out.params.weights,
        bias: out.params.bias,
        lambda: l1,
        l2,
        feature_mean: mean,
        feature_std: std,
        layer: features.feature_origin.first().map_or(0, |o| o.0),
        n_classes,
        converged: out.converged,
        final_objective: out.objective,
        iterations: out.iterations,
    })
}

/// Binary Lasso probe: minimizes mean BCE + `lambda * ||w||_1` over standardized features.
pub fn train_probe(features: &LabeledFeatureMatrix, lambda: f64, settings: &SolverSettings) -> Result<ProbeModel> {
    if features.n_classes != 2 {
        return Err(Error::invalid(format!(
            "binary probe needs labels in {{0,1}}, got n_classes = {}",
            features.n_classes
        )));
    }
    fit(features, lambda, 0.0, Link::Sigmoid, settings)
}

/// Multinomial Lasso probe with a full softmax row per class.
pub fn train_probe_multiclass(
    features: &LabeledFeatureMatrix,
    lambda: f64,
    settings: &SolverSettings,
) -> Result<ProbeModel> {
    fit(features, lambda, 0.0, Link::Softmax, settings)
}

/// Binary probe for two classes, multinomial otherwise.
pub fn train_probe_auto(features: &LabeledFeatureMatrix, lambda: f64, settings: &SolverSettings) -> Result<ProbeModel> {
    if features.n_classes == 2 {
        train_probe(features, lambda, settings)
    } else {
        train_probe_multiclass(features, lambda, settings)
    }
}

/// Ridge-only classifier used as the integration head.
pub fn train_head(features: &LabeledFeatureMatrix, l2: f64, settings: &SolverSettings) -> Result<ProbeModel> {
    let link = if features.n_classes == 2 {
        Link::Sigmoid
    } else {
        Link::Softmax
    };
    fit(features, 0.0, l2, link, settings)
}

pub fn predict_proba(model: &ProbeModel, features: &LabeledFeatureMatrix) -> Result<Array2<f64>> {
    predict_proba_raw(model, &features.features)
}

pub fn predict_proba_raw(model: &ProbeModel, raw: &Array2<f64>) -> Result<Array2<f64>> {
    if raw.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: raw.ncols(),
        });
    }
    Ok(model.proba_standardized(&model.transform(raw)))
}

/// Most probable class per row; ties go to the lower class index.
pub fn argmax_rows(proba: &Array2<f64>) -> Vec<usize> {
    proba
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best })
                .0
        })
        .collect()
}

pub fn predict(model: &ProbeModel, features: &LabeledFeatureMatrix) -> Result<Vec<usize>> {
    Ok(argmax_rows(&predict_proba(model, features)?))
}

//! Grid search over representation kind, pooling, `lambda` and `eta`;
//! k-fold cross-validation with a one-sample t-test.

mod cv;
mod grid;
mod tdist;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{HeadSettings, PrimaryMetric};
use crate::pooling::PoolingStrategy;
use crate::probe::SolverSettings;
use crate::repstore::RepKind;

pub use cv::{cross_validate, fold_partition, one_sample_t_test, CVResult, CvSettings, TTest};
pub use grid::{grid_search, GridOutcome, GridRow, SkippedCell, GRID_CSV_HEADER};
pub use tdist::{inc_beta, ln_gamma, t_cdf};

pub const TABLE6_LAMBDAS: [f64; 5] = [0.01, 0.1, 1.0, 5.0, 10.0];
pub const TABLE6_ETAS: [f64; 12] = [0.001, 0.005, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpace {
    pub rep_kinds: Vec<RepKind>,
    pub poolings: Vec<PoolingStrategy>,
    pub lambdas: Vec<f64>,
    pub etas: Vec<f64>,
}

impl Default for GridSpace {
    /// The full published search space: 2 kinds, 4 poolings, 5 lambdas, 12 etas.
    fn default() -> Self {
        Self {
            rep_kinds: RepKind::ALL.to_vec(),
            poolings: PoolingStrategy::ALL.to_vec(),
            lambdas: TABLE6_LAMBDAS.to_vec(),
            etas: TABLE6_ETAS.to_vec(),
        }
    }
}

impl GridSpace {
    pub fn singleton(config: &CellConfig) -> Self {
        Self {
            rep_kinds: vec![config.rep_kind],
            poolings: vec![config.pooling],
            lambdas: vec![config.lambda],
            etas: vec![config.eta],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rep_kinds.is_empty() || self.poolings.is_empty() || self.lambdas.is_empty() || self.etas.is_empty() {
            return Err(Error::invalid("every grid axis needs at least one value"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(format!("lambda must be positive and finite, got {l}")));
        }
        if let Some(e) = self.etas.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return Err(Error::invalid(format!("eta must lie in (0, 1], got {e}")));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.rep_kinds.len() * self.poolings.len() * self.lambdas.len() * self.etas.len()
    }

    /// All cells in axis order (rep_kind, pooling, lambda, eta).
    pub fn cells(&self) -> Vec<CellConfig> {
        let mut out = Vec::with_capacity(self.n_cells());
        for &rep_kind in &self.rep_kinds {
            for &pooling in &self.poolings {
                for &lambda in &self.lambdas {
                    for &eta in &self.etas {
                        out.push(CellConfig { rep_kind, pooling, lambda, eta });
                    }
                }
            }
        }
        out
    }
}

/// One point of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub rep_kind: RepKind,
    pub pooling: PoolingStrategy,
    pub lambda: f64,
    pub eta: f64,
}

impl CellConfig {
    /// Lexicographic (rep_kind, pooling, lambda, eta) order, enums in declaration order.
    pub fn cmp_key(&self, other: &Self) -> std::cmp::Ordering {
        self.rep_kind
            .cmp(&other.rep_kind)
            .then(self.pooling.cmp(&other.pooling))
            .then(self.lambda.total_cmp(&other.lambda))
            .then(self.eta.total_cmp(&other.eta))
    }
}

impl fmt::Display for CellConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rep_kind={} pooling={} lambda={} eta={}",
            self.rep_kind, self.pooling, self.lambda, self.eta
        )
    }
}

/// Solver and head settings shared by every cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub probe_solver: SolverSettings,
    pub head: HeadSettings,
    pub metric: PrimaryMetric,
}

impl PipelineSettings {
    pub fn validate(&self) -> Result<()> {
        self.probe_solver.validate()?;
        self.head.solver.validate()?;
        if !(self.head.head_l2 >= 0.0 && self.head.head_l2.is_finite()) {
            return Err(Error::invalid("head_l2 must be a finite non-negative number"));
        }
        Ok(())
    }
}

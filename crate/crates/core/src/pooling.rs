//! Token pooling: reduce a `[n_tokens][dim]` block to a `dim`-vector.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repstore::{LabeledFeatureMatrix, RepresentationDump};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingStrategy {
    First,
    Last,
    Max,
    Avg,
}

impl PoolingStrategy {
    pub const ALL: [PoolingStrategy; 4] = [
        PoolingStrategy::First,
        PoolingStrategy::Last,
        PoolingStrategy::Max,
        PoolingStrategy::Avg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolingStrategy::First => "first",
            PoolingStrategy::Last => "last",
            PoolingStrategy::Max => "max",
            PoolingStrategy::Avg => "avg",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            PoolingStrategy::First => 0,
            PoolingStrategy::Last => 1,
            PoolingStrategy::Max => 2,
            PoolingStrategy::Avg => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for PoolingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(PoolingStrategy::First),
            "last" => Ok(PoolingStrategy::Last),
            "max" => Ok(PoolingStrategy::Max),
            "avg" => Ok(PoolingStrategy::Avg),
            other => Err(Error::invalid(format!(
                "unknown pooling strategy {other:?} (expected first|last|max|avg)"
            ))),
        }
    }
}

pub fn pool(tokens: ArrayView2<'_, f32>, strategy: PoolingStrategy) -> Result<Vec<f64>> {
    let (n_tokens, dim) = tokens.dim();
    if n_tokens == 0 {
        return Err(Error::EmptyTokens);
    }
    match tokens.as_slice() {
        Some(flat) => Ok(pool_flat(flat, n_tokens, dim, strategy)),
        None => {
            let owned = tokens.as_standard_layout();
            Ok(pool_flat(owned.as_slice().expect("standard layout"), n_tokens, dim, strategy))
        }
    }
}

/// Pools a row-major `[n_tokens][dim]` block; `n_tokens >= 1` is the caller's job.
pub(crate) fn pool_flat(block: &[f32], n_tokens: usize, dim: usize, strategy: PoolingStrategy) -> Vec<f64> {
    debug_assert!(n_tokens >= 1 && block.len() == n_tokens * dim);
    let row = |t: usize| &block[t * dim..(t + 1) * dim];
    match strategy {
        PoolingStrategy::First => row(0).iter().map(|&v| f64::from(v)).collect(),
        PoolingStrategy::Last => row(n_tokens - 1).iter().map(|&v| f64::from(v)).collect(),
        PoolingStrategy::Max => {
            let mut out: Vec<f64> = row(0).iter().map(|&v| f64::from(v)).collect();
            for t in 1..n_tokens {
                for (o, &v) in out.iter_mut().zip(row(t)) {
                    *o = o.max(f64::from(v));
                }
            }
            out
        }
        PoolingStrategy::Avg => {
            let mut out = vec![0.0f64; dim];
            for t in 0..n_tokens {
                for (o, &v) in out.iter_mut().zip(row(t)) {
                    *o += f64::from(v);
                }
            }
            let n = n_tokens as f64;
            out.iter_mut().for_each(|o| *o /= n);
            out
        }
    }
}

/// Pooled `[n_sentences][dim]` matrix of one layer.
pub(crate) fn pooled_layer(dump: &RepresentationDump, strategy: PoolingStrategy, layer: usize) -> Result<Array2<f64>> {
    if layer >= dump.n_layers {
        return Err(Error::LayerOutOfRange {
            layer,
            n_layers: dump.n_layers,
        });
    }
    let mut out = Array2::zeros((dump.n_sentences(), dump.dim));
    for (mut row, s) in out.rows_mut().into_iter().zip(&dump.sentences) {
        let pooled = pool_flat(s.layer(layer, dump.dim), s.n_tokens, dump.dim, strategy);
        row.iter_mut().zip(pooled).for_each(|(r, v)| *r = v);
    }
    Ok(out)
}

pub fn pool_dump(dump: &RepresentationDump, strategy: PoolingStrategy, layer: usize) -> Result<LabeledFeatureMatrix> {
    let features = pooled_layer(dump, strategy, layer)?;
    LabeledFeatureMatrix::new(
        features,
        dump.labels(),
        (0..dump.dim).map(|j| (layer, j)).collect(),
        dump.n_classes(),
    )
}

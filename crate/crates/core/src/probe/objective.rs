//! Smooth part of the probe objective: mean cross-entropy plus an optional
//! ridge term `l2 * ||W||^2`. The L1 term is handled by the proximal step.

use ndarray::{Array1, Array2, ArrayView2, Axis};

/// Link function between the linear scores and class probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// One weight row; probability of class 1 is `sigmoid(w.x + b)`.
    Sigmoid,
    /// One weight row per class, softmax over rows.
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Params {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            weights: Array2::zeros((rows, dim)),
            bias: Array1::zeros(rows),
        }
    }

    pub(crate) fn dot(&self, other: &Params) -> f64 {
        (&self.weights * &other.weights).sum() + self.bias.dot(&other.bias)
    }

    pub(crate) fn sq_dist(&self, other: &Params) -> f64 {
        let dw = &self.weights - &other.weights;
        let db = &self.bias - &other.bias;
        dw.mapv(|v| v * v).sum() + db.mapv(|v| v * v).sum()
    }

    pub(crate) fn l1_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub struct LogisticObjective<'a> {
    x: ArrayView2<'a, f64>,
    labels: &'a [usize],
    n_classes: usize,
    link: Link,
    l2: f64,
}

impl<'a> LogisticObjective<'a> {
    /// Panics if shapes disagree or a label is out of range; callers validate first.
    pub fn new(x: ArrayView2<'a, f64>, labels: &'a [usize], n_classes: usize, link: Link, l2: f64) -> Self {
        assert_eq!(x.nrows(), labels.len(), "row count must match label count");
        assert!(labels.iter().all(|&y| y < n_classes), "label out of range");
        assert!(link == Link::Softmax || n_classes == 2, "sigmoid link is binary");
        Self {
            x,
            labels,
            n_classes,
            link,
            l2,
        }
    }

    pub fn n_rows(&self) -> usize {
        match self.link {
            Link::Sigmoid => 1,
            Link::Softmax => self.n_classes,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn scores(&self, p: &Params) -> Array2<f64> {
        let mut z = self.x.dot(&p.weights.t());
        z += &p.bias.view().insert_axis(Axis(0));
        z
    }

    /// Mean cross-entropy over rows, plus the ridge term.
    pub fn value(&self, p: &Params) -> f64 {
        let z = self.scores(p);
        let n = self.labels.len() as f64;
        let loss: f64 = match self.link {
            Link::Sigmoid => z
                .column(0)
                .iter()
                .zip(self.labels)
                .map(|(&zi, &y)| softplus(zi) - if y == 1 { zi } else { 0.0 })
                .sum(),
            Link::Softmax => z
                .rows()
                .into_iter()
                .zip(self.labels)
                .map(|(row, &y)| log_sum_exp(row.iter().copied()) - row[y])
                .sum(),
        };
        loss / n + self.ridge(p)
    }

    fn ridge(&self, p: &Params) -> f64 {
        if self.l2 == 0.0 {
            0.0
        } else {
            self.l2 * p.weights.mapv(|w| w * w).sum()
        }
    }

    pub fn value_and_gradient(&self, p: &Params) -> (f64, Params) {
        let z = self.scores(p);
        let n = self.labels.len() as f64;
        let mut loss = 0.0;
        // residual: predicted probability minus target, per score column
        let mut resid = Array2::<f64>::zeros(z.raw_dim());
        match self.link {
            Link::Sigmoid => {
                for ((&zi, &y), r) in z.column(0).iter().zip(self.labels).zip(resid.column_mut(0)) {
                    let target = if y == 1 { 1.0 } else { 0.0 };
                    loss += softplus(zi) - target * zi;
                    *r = sigmoid(zi) - target;
                }
            }
            Link::Softmax => {
                for ((row, &y), mut r) in z.rows().into_iter().zip(self.labels).zip(resid.rows_mut()) {
                    let lse = log_sum_exp(row.iter().copied());
                    loss += lse - row[y];
                    for (k, (rk, &zk)) in r.iter_mut().zip(row.iter()).enumerate() {
                        *rk = (zk - lse).exp() - if k == y { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        let mut gw = resid.t().dot(&self.x) / n;
        if self.l2 != 0.0 {
            gw.scaled_add(2.0 * self.l2, &p.weights);
        }
        let gb = resid.sum_axis(Axis(0)) / n;
        (
            loss / n + self.ridge(p),
            Params {
                weights: gw,
                bias: gb,
            },
        )
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

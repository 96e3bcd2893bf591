//! Proximal gradient descent (ISTA) with backtracking line search.

use super::objective::{LogisticObjective, Params};
use super::SolverSettings;

pub(crate) struct FitOutcome {
    pub params: Params,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Full objective after every accepted step, starting with the initial point.
    #[cfg_attr(not(test), allow(dead_code))]
    pub trace: Vec<f64>,
}

fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Minimizes `obj(p) + l1 * ||W||_1`; the bias is never penalized.
pub(crate) fn minimize(obj: &LogisticObjective<'_>, l1: f64, init: Params, settings: &SolverSettings) -> FitOutcome {
    const MIN_STEP: f64 = 1e-18;
    const GROW: f64 = 1.25;

    let mut p = init;
    let mut smooth = obj.value(&p);
    let mut full = smooth + l1 * p.l1_norm();
    let mut trace = vec![full];
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iters {
        iterations += 1;
        let (f0, grad) = obj.value_and_gradient(&p);
        debug_assert!((f0 - smooth).abs() <= 1e-12 * (1.0 + smooth.abs()));

        let (candidate, f1) = loop {
            let mut weights = &p.weights - &(&grad.weights * step);
            let tau = step * l1;
            if tau > 0.0 {
                weights.mapv_inplace(|w| soft_threshold(w, tau));
            }
            let bias = &p.bias - &(&grad.bias * step);
            let candidate = Params { weights, bias };
            let f1 = obj.value(&candidate);
            let diff = Params {
                weights: &candidate.weights - &p.weights,
                bias: &candidate.bias - &p.bias,
            };
            let model = f0 + grad.dot(&diff) + candidate.sq_dist(&p) / (2.0 * step);
            if f1.is_finite() && f1 <= model + 1e-15 * f0.abs().max(1.0) {
                break (Some(candidate), f1);
            }
            step *= 0.5;
            if step < MIN_STEP {
                break (None, f1);
            }
        };
        let Some(candidate) = candidate else {
            // line search stalled; treat as numerical failure to converge
            break;
        };

        let new_full = f1 + l1 * candidate.l1_norm();
        // sufficient decrease implies monotone objective up to rounding
        assert!(
            new_full <= full + 1e-12 * full.abs().max(1.0),
            "objective increased from {full} to {new_full}"
        );
        let rel = (full - new_full) / full.abs().max(f64::MIN_POSITIVE);
        p = candidate;
        smooth = f1;
        full = new_full;
        trace.push(full);
        if rel < settings.rel_tol {
            converged = true;
            break;
        }
        step *= GROW;
    }

    FitOutcome {
        params: p,
        objective: full,
        converged,
        iterations,
        trace,
    }
}

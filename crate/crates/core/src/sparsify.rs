//! Salient-neuron selection: L1-normalize probe weights, sort descending and
//! keep the shortest prefix whose cumulative mass reaches `eta`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;

use crate::codec::{check_magic, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::probe::ProbeModel;

/// Slack on the cumulative-mass comparison, absorbing rounding in the normalization.
pub const SELECTION_TOL: f64 = 1e-12;

pub const SIDECAR_MAGIC: &[u8; 8] = b"SPINSALW";
pub const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SalientSet {
    pub eta: f64,
    /// layer -> selected `(neuron, normalized weight)`, highest weight first.
    pub per_layer: BTreeMap<usize, Vec<(usize, f64)>>,
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0, 1], got {eta}")));
    }
    Ok(())
}

pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("weights must be finite"));
    }
    let total: f64 = weights.iter().map(|w| w.abs()).sum();
    if total == 0.0 {
        return Err(Error::NoInformativeNeurons { layer: None });
    }
    Ok(weights.iter().map(|w| w.abs() / total).collect())
}

/// Ranking used by selection: weight descending, then index ascending.
fn ranked(normalized: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..normalized.len()).filter(|&i| normalized[i] > 0.0).collect();
    order.sort_by(|&a, &b| normalized[b].total_cmp(&normalized[a]).then(a.cmp(&b)));
    order
}

pub fn select_salient(normalized: &[f64], eta: f64) -> Result<Vec<usize>> {
    Ok(select_with_weights(normalized, eta)?.into_iter().map(|(i, _)| i).collect())
}

fn select_with_weights(normalized: &[f64], eta: f64) -> Result<Vec<(usize, f64)>> {
    check_eta(eta)?;
    let mut out = Vec::new();
    let mut cumulative = 0.0;
    for i in ranked(normalized) {
        out.push((i, normalized[i]));
        cumulative += normalized[i];
        if cumulative + SELECTION_TOL >= eta {
            break;
        }
    }
    // falling through means every nonzero neuron is already selected
    Ok(out)
}

/// Class-summed absolute weight per neuron; a single row reduces to `|w|`.
pub fn multiclass_importance(weights: &Array2<f64>) -> Vec<f64> {
    weights
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|w| w.abs()).sum())
        .collect()
}

pub fn sparsify_multiclass(weights: &Array2<f64>, eta: f64) -> Result<Vec<usize>> {
    let normalized = normalize_weights(&multiclass_importance(weights))?;
    select_salient(&normalized, eta)
}

/// Per-layer selection from one probe per layer.
pub fn build_salient_set(probes: &[ProbeModel], eta: f64) -> Result<SalientSet> {
    check_eta(eta)?;
    let mut per_layer = BTreeMap::new();
    for probe in probes {
        let normalized = normalize_weights(&multiclass_importance(&probe.weights)).map_err(|e| match e {
            Error::NoInformativeNeurons { .. } => Error::NoInformativeNeurons {
                layer: Some(probe.layer),
            },
            other => other,
        })?;
        if per_layer
            .insert(probe.layer, select_with_weights(&normalized, eta)?)
            .is_some()
        {
            return Err(Error::invalid(format!("two probes for layer {}", probe.layer)));
        }
    }
    Ok(SalientSet { eta, per_layer })
}

impl SalientSet {
    pub fn indices(&self, layer: usize) -> Option<Vec<usize>> {
        self.per_layer
            .get(&layer)
            .map(|v| v.iter().map(|&(i, _)| i).collect())
    }

    pub fn n_selected(&self) -> usize {
        self.per_layer.values().map(Vec::len).sum()
    }

    /// Only the listed layers.
    pub fn restrict(&self, layers: &[usize]) -> Result<SalientSet> {
        let mut per_layer = BTreeMap::new();
        for &l in layers {
            let entry = self
                .per_layer
                .get(&l)
                .ok_or_else(|| Error::invalid(format!("salient set has no selection for layer {l}")))?;
            per_layer.insert(l, entry.clone());
        }
        Ok(SalientSet {
            eta: self.eta,
            per_layer,
        })
    }

    /// The `k` highest-ranked neurons of every layer (fewer when a layer has fewer).
    pub fn top_k(&self, k: usize) -> SalientSet {
        SalientSet {
            eta: self.eta,
            per_layer: self
                .per_layer
                .iter()
                .map(|(&l, v)| (l, v.iter().take(k).copied().collect()))
                .collect(),
        }
    }

    /// One line per layer: `layer=<l> eta=<eta> indices=<i1,i2,...>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (l, entries) in &self.per_layer {
            let idx: Vec<String> = entries.iter().map(|(i, _)| i.to_string()).collect();
            let _ = writeln!(out, "layer={l} eta={} indices={}", self.eta, idx.join(","));
        }
        out
    }

    /// Normalized weights of every selected neuron, in text-block order.
    pub fn encode_weights(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(SIDECAR_MAGIC);
        w.u32(SIDECAR_VERSION);
        w.len_u32(self.per_layer.len())?;
        for (&l, entries) in &self.per_layer {
            w.len_u32(l)?;
            w.len_u32(entries.len())?;
            for &(_, v) in entries {
                w.f64(v);
            }
        }
        Ok(w.into_inner())
    }

    /// Rebuilds a set from its text block and weight sidecar.
    pub fn from_text(text: &str, sidecar: &[u8]) -> Result<SalientSet> {
        let mut r = ByteReader::new(sidecar);
        check_magic(&mut r, SIDECAR_MAGIC)?;
        let version = r.u32()?;
        if version != SIDECAR_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let n_layers = r.u32()? as usize;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != n_layers {
            return Err(Error::InvalidModel(format!(
                "text lists {} layers, sidecar {n_layers}",
                lines.len()
            )));
        }
        let mut eta = None;
        let mut per_layer = BTreeMap::new();
        for line in lines {
            let (layer, line_eta, indices) = parse_line(line)?;
            if eta.is_some_and(|e| e != line_eta) {
                return Err(Error::InvalidModel("inconsistent eta across layers".into()));
            }
            eta = Some(line_eta);
            if r.u32()? as usize != layer || r.u32()? as usize != indices.len() {
                return Err(Error::InvalidModel(format!("sidecar disagrees with text at layer {layer}")));
            }
            let mut entries = Vec::with_capacity(indices.len());
            for i in indices {
                entries.push((i, r.f64()?));
            }
            per_layer.insert(layer, entries);
        }
        r.finish()?;
        let eta = eta.ok_or_else(|| Error::InvalidModel("empty salient set".into()))?;
        check_eta(eta)?;
        Ok(SalientSet { eta, per_layer })
    }

    pub(crate) fn write_into(&self, w: &mut ByteWriter) -> Result<()> {
        w.f64(self.eta);
        w.len_u32(self.per_layer.len())?;
        for (&l, entries) in &self.per_layer {
            w.len_u32(l)?;
            w.len_u32(entries.len())?;
            for &(i, v) in entries {
                w.len_u32(i)?;
                w.f64(v);
            }
        }
        Ok(())
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<SalientSet> {
        let eta = r.f64()?;
        let n_layers = r.u32()? as usize;
        let mut per_layer = BTreeMap::new();
        for _ in 0..n_layers {
            let l = r.u32()? as usize;
            let n = r.u32()? as usize;
            r.ensure(n.checked_mul(12))?;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                entries.push((r.u32()? as usize, r.f64()?));
            }
            per_layer.insert(l, entries);
        }
        Ok(SalientSet { eta, per_layer })
    }
}

fn parse_line(line: &str) -> Result<(usize, f64, Vec<usize>)> {
    let bad = || Error::InvalidModel(format!("malformed salient line {line:?}"));
    let mut layer = None;
    let mut eta = None;
    let mut indices = None;
    for field in line.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(bad)?;
        match k {
            "layer" => layer = Some(v.parse::<usize>().map_err(|_| bad())?),
            "eta" => eta = Some(v.parse::<f64>().map_err(|_| bad())?),
            "indices" => {
                indices = Some(if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|s| s.parse::<usize>().map_err(|_| bad()))
                        .collect::<Result<Vec<_>>>()?
                })
            }
            _ => return Err(bad()),
        }
    }
    Ok((layer.ok_or_else(bad)?, eta.ok_or_else(bad)?, indices.ok_or_else(bad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    fn probe_with(layer: usize, weights: Vec<f64>) -> ProbeModel {
        let d = weights.len();
        ProbeModel {
            weights: Array2::from_shape_vec((1, d), weights).unwrap(),
            bias: Array1::zeros(1),
            lambda: 0.1,
            l2: 0.0,
            feature_mean: Array1::zeros(d),
            feature_std: Array1::ones(d),
            layer,
            n_classes: 2,
            converged: true,
            final_objective: 0.0,
            iterations: 1,
        }
    }

    /// Shortest prefix of the ranking reaching eta, by trying every prefix length.
    fn exhaustive(normalized: &[f64], eta: f64) -> Vec<usize> {
        let order = ranked(normalized);
        for len in 1..=order.len() {
            let s: f64 = order[..len].iter().map(|&i| normalized[i]).sum();
            if s + SELECTION_TOL >= eta {
                return order[..len].to_vec();
            }
        }
        order
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_weights(&[3.0, -1.0, 0.0]).unwrap(), vec![0.75, 0.25, 0.0]);
        assert_eq!(normalize_weights(&[0.2, 0.2, 0.6]).unwrap(), vec![0.2, 0.2, 0.6]);
        let err = normalize_weights(&[0.0, 0.0, 0.0]).unwrap_err();
        assert_eq!(err.to_string(), "probe has no informative neurons (all weights zero)");
    }

    #[test]
    fn select_examples() {
        let v = [0.5, 0.3, 0.2];
        assert_eq!(select_salient(&v, 0.7).unwrap(), vec![0, 1]);
        assert_eq!(exhaustive(&v, 0.7), vec![0, 1]);
        assert_eq!(select_salient(&[0.4, 0.6, 0.0], 1.0).unwrap(), vec![1, 0]);
        assert_eq!(select_salient(&[0.25; 4], 0.5).unwrap(), vec![0, 1]);
        assert!(select_salient(&v, 0.0).is_err());
        assert!(select_salient(&v, 1.5).is_err());
    }

    #[test]
    fn multiclass_examples() {
        assert_eq!(sparsify_multiclass(&array![[1.0, 0.0], [-1.0, 0.0]], 1.0).unwrap(), vec![0]);
        assert_eq!(sparsify_multiclass(&array![[1.0, 0.0], [-1.0, 0.0]], 0.01).unwrap(), vec![0]);
        let row = array![[0.5, -0.1, 0.3, 0.0]];
        let direct = select_salient(&normalize_weights(&[0.5, -0.1, 0.3, 0.0]).unwrap(), 0.8).unwrap();
        assert_eq!(sparsify_multiclass(&row, 0.8).unwrap(), direct);
        let three = array![
            [5.0, 0.1, 0.0, 0.1, 0.0],
            [0.0, 0.2, 4.0, 0.0, 0.1],
            [0.1, 0.0, 0.0, 0.1, 6.0]
        ];
        let mut got = sparsify_multiclass(&three, 0.9).unwrap();
        got.sort();
        assert_eq!(got, vec![0, 2, 4]);
    }

    #[test]
    fn build_set_per_layer() {
        let probes = vec![probe_with(0, vec![1.0, 0.0]), probe_with(1, vec![0.0, 1.0])];
        let set = build_salient_set(&probes, 0.5).unwrap();
        assert_eq!(set.indices(0).unwrap(), vec![0]);
        assert_eq!(set.indices(1).unwrap(), vec![1]);
    }

    #[test]
    fn build_set_reports_layer_of_dead_probe() {
        let probes = vec![probe_with(0, vec![1.0, 0.0]), probe_with(3, vec![0.0, 0.0])];
        let err = build_salient_set(&probes, 0.5).unwrap_err();
        assert!(matches!(err, Error::NoInformativeNeurons { layer: Some(3) }));
        assert!(err.to_string().ends_with("in layer 3"));
    }

    #[test]
    fn smaller_eta_gives_subsets() {
        let probes = vec![
            probe_with(0, vec![0.4, -0.1, 0.3, 0.05, 0.15]),
            probe_with(1, vec![0.0, 2.0, -1.0, 0.5, 0.5]),
        ];
        let low = build_salient_set(&probes, 0.2).unwrap();
        let high = build_salient_set(&probes, 0.8).unwrap();
        for l in 0..2 {
            let hi = high.indices(l).unwrap();
            assert!(low.indices(l).unwrap().iter().all(|i| hi.contains(i)));
        }
    }

    #[test]
    fn concentrated_mass_selects_three_percent() {
        // 3% of 6400 neurons carry 40% of the L1 mass
        let d = 6400;
        let heavy = d * 3 / 100;
        let w: Vec<f64> = (0..d)
            .map(|i| if i % 33 == 0 && i / 33 < heavy { 0.4 / heavy as f64 } else { 0.6 / (d - heavy) as f64 })
            .collect();
        let n_heavy = w.iter().filter(|&&v| v > 1e-3).count();
        assert_eq!(n_heavy, heavy);
        let set = build_salient_set(&[probe_with(0, w)], 0.4).unwrap();
        let frac = set.n_selected() as f64 / d as f64;
        assert!((frac - 0.03).abs() < 0.001, "selected fraction {frac}");
    }

    #[test]
    fn text_and_sidecar_round_trip() {
        let probes = vec![probe_with(0, vec![0.4, -0.1, 0.3]), probe_with(2, vec![0.0, 2.0, -1.0])];
        let set = build_salient_set(&probes, 0.6).unwrap();
        let text = set.to_text();
        assert_eq!(text, "layer=0 eta=0.6 indices=0,2\nlayer=2 eta=0.6 indices=1\n");
        let back = SalientSet::from_text(&text, &set.encode_weights().unwrap()).unwrap();
        assert_eq!(back, set);
        assert!(SalientSet::from_text("layer=0 eta=0.6\n", &set.encode_weights().unwrap()).is_err());
    }

    #[test]
    fn top_k_truncates() {
        let probes = vec![probe_with(0, vec![0.4, -0.1, 0.3, 0.2])];
        let set = build_salient_set(&probes, 1.0).unwrap();
        assert_eq!(set.top_k(2).indices(0).unwrap(), vec![0, 2]);
        assert_eq!(set.top_k(10).indices(0).unwrap(), vec![0, 2, 3, 1]);
    }

    fn simplex(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn selection_is_minimal_and_reaches_eta(
            raw in prop::collection::vec(0.0f64..1.0, 1..30),
            eta in 0.001f64..1.0,
        ) {
            prop_assume!(raw.iter().any(|&v| v > 0.0));
            let v = simplex(&raw);
            let sel = select_salient(&v, eta).unwrap();
            let sum: f64 = sel.iter().map(|&i| v[i]).sum();
            let nonzero = v.iter().filter(|&&x| x > 0.0).count();
            prop_assert!(sum + SELECTION_TOL >= eta || sel.len() == nonzero);
            let without_last: f64 = sel[..sel.len() - 1].iter().map(|&i| v[i]).sum();
            prop_assert!(without_last + SELECTION_TOL < eta);
            prop_assert_eq!(sel, exhaustive(&v, eta));
        }

        #[test]
        fn monotone_in_eta(raw in prop::collection::vec(0.0f64..1.0, 1..30), a in 0.001f64..1.0, b in 0.001f64..1.0) {
            prop_assume!(raw.iter().any(|&v| v > 0.0));
            let v = simplex(&raw);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = select_salient(&v, lo).unwrap();
            let large = select_salient(&v, hi).unwrap();
            prop_assert!(small.iter().all(|i| large.contains(i)));
        }

        #[test]
        fn sign_flips_do_not_matter(raw in prop::collection::vec(-1.0f64..1.0, 1..20), mask in any::<u32>(), eta in 0.01f64..1.0) {
            prop_assume!(raw.iter().any(|&v| v != 0.0));
            let flipped: Vec<f64> = raw.iter().enumerate().map(|(i, &v)| if mask >> (i % 32) & 1 == 1 { -v } else { v }).collect();
            let a = select_salient(&normalize_weights(&raw).unwrap(), eta).unwrap();
            let b = select_salient(&normalize_weights(&flipped).unwrap(), eta).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn permutation_equivariant(raw in prop::collection::vec(0.001f64..1.0, 2..20), shift in 1usize..19, eta in 0.01f64..1.0) {
            // distinct weights so that tie-breaking plays no role
            let mut raw = raw;
            for (i, v) in raw.iter_mut().enumerate() {
                *v += i as f64 * 1e-6;
            }
            let n = raw.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let mut permuted = vec![0.0; n];
            for (i, &p) in perm.iter().enumerate() {
                permuted[p] = raw[i];
            }
            let a = select_salient(&normalize_weights(&raw).unwrap(), eta).unwrap();
            let b = select_salient(&normalize_weights(&permuted).unwrap(), eta).unwrap();
            let mapped: Vec<usize> = a.iter().map(|&i| perm[i]).collect();
            prop_assert_eq!(mapped, b);
        }
    }
}

//! Analytical estimates of trainable parameters and training FLOPs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repstore::RepKind;

const PRESETS_CSV: &str = include_str!("model_presets.csv");

pub const REPORTING_MAX_ITERS: u64 = 64;
pub const REPORTING_RHO: f64 = 0.1;
pub const REPORTING_SENTENCES: u64 = 25_000;
pub const REPORTING_TOKENS: u64 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostInputs {
    pub n_param_llm: u64,
    pub n_layers: u64,
    pub d_hs: u64,
    /// Width of the representation actually probed (hidden states or activations).
    pub d: u64,
    pub n_token: u64,
    pub n_sentences: u64,
    pub max_iters: u64,
    pub rho_eta: f64,
}

impl CostInputs {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_param_llm", self.n_param_llm),
            ("n_layers", self.n_layers),
            ("d_hs", self.d_hs),
            ("d", self.d),
            ("n_token", self.n_token),
            ("n_sentences", self.n_sentences),
            ("max_iters", self.max_iters),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if !(self.rho_eta > 0.0 && self.rho_eta <= 1.0) {
            return Err(Error::invalid(format!("rho_eta must lie in (0, 1], got {}", self.rho_eta)));
        }
        Ok(())
    }

    fn f(&self) -> (f64, f64, f64, f64) {
        (
            self.n_layers as f64,
            self.d as f64,
            self.max_iters as f64,
            self.n_sentences as f64,
        )
    }
}

/// `L·D + ½·L²·ρ·D`: the per-layer probes plus the growing integration heads.
pub fn spin_trainable_params(inputs: &CostInputs) -> Result<f64> {
    inputs.validate()?;
    let (l, d, _, _) = inputs.f();
    Ok(l * d + 0.5 * l * l * inputs.rho_eta * d)
}

/// `(2·N_param + 2·L·D_hs·N_token)·N_s`.
pub fn llm_forward_flops(inputs: &CostInputs) -> Result<f64> {
    inputs.validate()?;
    let l = inputs.n_layers as f64;
    let per_sentence =
        2.0 * inputs.n_param_llm as f64 + 2.0 * l * inputs.d_hs as f64 * inputs.n_token as f64;
    Ok(per_sentence * inputs.n_sentences as f64)
}

/// One logistic-regression fit of width `width`: `I·(2·width·N_s + N_s)`.
pub fn lr_train_flops(max_iters: u64, width: f64, n_sentences: u64) -> f64 {
    let ns = n_sentences as f64;
    max_iters as f64 * (2.0 * width * ns + ns)
}

/// Stage sum: L probes of width D, then one head per cutoff k = 1..L whose
/// width is the cumulative sparsified width k·ρ·D.
pub fn spin_train_flops(inputs: &CostInputs) -> Result<f64> {
    inputs.validate()?;
    let (l, d, _, _) = inputs.f();
    let probes = l * lr_train_flops(inputs.max_iters, d, inputs.n_sentences);
    let heads: f64 = (1..=inputs.n_layers)
        .map(|k| lr_train_flops(inputs.max_iters, k as f64 * inputs.rho_eta * d, inputs.n_sentences))
        .sum();
    Ok(probes + heads)
}

/// The stage sum with the per-sample sigmoid (`+N_s`) terms removed.
pub fn spin_train_flops_without_sigmoid(inputs: &CostInputs) -> Result<f64> {
    inputs.validate()?;
    let (l, d, i, ns) = inputs.f();
    Ok(i * ns * (2.0 * l * d + inputs.rho_eta * d * l * (l + 1.0)))
}

/// Closed-form approximation `I·(2·L·D + L²·ρ·D)·N_s`.
pub fn spin_train_flops_closed_form(inputs: &CostInputs) -> Result<f64> {
    inputs.validate()?;
    let (l, d, i, ns) = inputs.f();
    Ok(i * (2.0 * l * d + l * l * inputs.rho_eta * d) * ns)
}

/// Fine-tuning estimate: three forward passes' worth (forward plus a backward
/// at twice the forward cost) for one epoch. An approximation, not a count.
pub fn finetune_flops_estimate(inputs: &CostInputs) -> Result<f64> {
    Ok(3.0 * llm_forward_flops(inputs)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPreset {
    pub name: String,
    pub n_layers: u64,
    pub d_hs: u64,
    pub d_act: u64,
    pub n_param: u64,
}

impl ModelPreset {
    pub fn width(&self, kind: RepKind) -> u64 {
        match kind {
            RepKind::HiddenStates => self.d_hs,
            RepKind::Activations => self.d_act,
        }
    }

    /// The reporting setup: I = 64, ρ = 0.1, N_s = 25000, 512 tokens.
    pub fn reporting_inputs(&self, kind: RepKind) -> CostInputs {
        CostInputs {
            n_param_llm: self.n_param,
            n_layers: self.n_layers,
            d_hs: self.d_hs,
            d: self.width(kind),
            n_token: REPORTING_TOKENS,
            n_sentences: REPORTING_SENTENCES,
            max_iters: REPORTING_MAX_ITERS,
            rho_eta: REPORTING_RHO,
        }
    }
}

/// The eight shipped model presets, in file order.
pub fn model_presets() -> Vec<ModelPreset> {
    PRESETS_CSV
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| f[i].trim().parse::<u64>().expect("preset table is well formed");
            ModelPreset {
                name: f[0].trim().to_string(),
                n_layers: num(1),
                d_hs: num(2),
                d_act: num(3),
                n_param: num(4),
            }
        })
        .collect()
}

/// Case-insensitive lookup.
pub fn model_preset(name: &str) -> Result<ModelPreset> {
    model_presets()
        .into_iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| {
            let known: Vec<String> = model_presets().into_iter().map(|p| p.name).collect();
            Error::invalid(format!("unknown preset {name:?}; known: {}", known.join(", ")))
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub name: String,
    pub inputs: CostInputs,
    pub spin_params: f64,
    pub spin_flops: f64,
    pub spin_flops_closed_form: f64,
    pub llm_forward_flops: f64,
    pub finetune_flops: f64,
}

pub const COST_CSV_HEADER: &str =
    "name,n_layers,d,rho_eta,spin_params,spin_flops,spin_flops_closed_form,llm_forward_flops,finetune_flops_approx,spin_to_forward";

impl CostRow {
    pub fn new(name: impl Into<String>, inputs: CostInputs) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            spin_params: spin_trainable_params(&inputs)?,
            spin_flops: spin_train_flops(&inputs)?,
            spin_flops_closed_form: spin_train_flops_closed_form(&inputs)?,
            llm_forward_flops: llm_forward_flops(&inputs)?,
            finetune_flops: finetune_flops_estimate(&inputs)?,
            inputs,
        })
    }

    pub fn ratio(&self) -> f64 {
        self.spin_flops / self.llm_forward_flops
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.name,
            self.inputs.n_layers,
            self.inputs.d,
            self.inputs.rho_eta,
            self.spin_params,
            self.spin_flops,
            self.spin_flops_closed_form,
            self.llm_forward_flops,
            self.finetune_flops,
            self.ratio()
        )
    }
}

/// Fixed-width text table of `rows`.
pub fn cost_table(rows: &[CostRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>4} {:>6} {:>14} {:>12} {:>12} {:>12} {:>12} {:>9}",
        "model", "L", "D", "params", "spin", "closed", "forward", "finetune~", "ratio"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>4} {:>6} {:>14.1} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>9.5}",
            r.name,
            r.inputs.n_layers,
            r.inputs.d,
            r.spin_params,
            r.spin_flops,
            r.spin_flops_closed_form,
            r.llm_forward_flops,
            r.finetune_flops,
            r.ratio()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> CostInputs {
        CostInputs {
            n_param_llm: 1_000_000,
            n_layers: 12,
            d_hs: 768,
            d: 3072,
            n_token: 512,
            n_sentences: 1,
            max_iters: 64,
            rho_eta: 0.1,
        }
    }

    #[test]
    fn trainable_params_examples() {
        assert_eq!(spin_trainable_params(&base()).unwrap(), 58982.4);
        let one = CostInputs { n_layers: 1, ..base() };
        assert_eq!(spin_trainable_params(&one).unwrap(), 3072.0 + 0.5 * 0.1 * 3072.0);
        let small = CostInputs {
            n_layers: 2,
            d: 10,
            rho_eta: 1.0,
            ..base()
        };
        assert_eq!(spin_trainable_params(&small).unwrap(), 40.0);
    }

    #[test]
    fn forward_example_and_linearity() {
        assert_eq!(llm_forward_flops(&base()).unwrap(), 11_437_184.0);
        let twice = CostInputs { n_sentences: 2, ..base() };
        assert_eq!(llm_forward_flops(&twice).unwrap(), 2.0 * 11_437_184.0);
        let zero = CostInputs { n_sentences: 0, ..base() };
        assert!(llm_forward_flops(&zero).is_err());
        assert!(spin_train_flops(&CostInputs { rho_eta: 0.0, ..base() }).is_err());
        assert!(spin_train_flops(&CostInputs { rho_eta: 1.5, ..base() }).is_err());
    }

    #[test]
    fn probe_stage_example() {
        assert_eq!(lr_train_flops(64, 100.0, 1000), 12_864_000.0);
    }

    #[test]
    fn single_layer_full_width_is_two_probe_fits() {
        let i = CostInputs {
            n_layers: 1,
            rho_eta: 1.0,
            d: 100,
            n_sentences: 1000,
            ..base()
        };
        let two = 2.0 * lr_train_flops(64, 100.0, 1000);
        assert!((spin_train_flops(&i).unwrap() - two).abs() <= 0.01 * two);
    }

    #[test]
    fn stage_sum_expands_to_polynomial() {
        let i = base();
        let (l, d) = (12.0, 3072.0);
        let expect = 64.0 * (2.0 * l * d + 0.1 * d * l * (l + 1.0) + 2.0 * l);
        let got = spin_train_flops(&i).unwrap();
        assert!((got - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn presets_load() {
        let p = model_presets();
        assert_eq!(p.len(), 8);
        assert_eq!(model_preset("gpt2-xl").unwrap().n_layers, 48);
        assert!(model_preset("nope").is_err());
    }

    #[test]
    fn presets_are_cheap_relative_to_forward() {
        for p in model_presets() {
            let row = CostRow::new(&p.name, p.reporting_inputs(RepKind::Activations)).unwrap();
            assert!(row.ratio() < 0.1, "{}: {}", p.name, row.ratio());
        }
    }

    #[test]
    fn sigmoid_terms_are_marginal_on_presets() {
        for p in model_presets() {
            for kind in RepKind::ALL {
                let i = p.reporting_inputs(kind);
                if i.d < 1000 {
                    continue;
                }
                let full = spin_train_flops(&i).unwrap();
                let dropped = spin_train_flops_without_sigmoid(&i).unwrap();
                assert!((full - dropped) / full < 1e-3, "{} {kind}", p.name);
            }
        }
    }

    #[test]
    fn sigmoid_share_has_closed_form() {
        // share = 2 / (2D + ρD(L+1) + 2); at D = 512 with small L it exceeds 0.1%
        let i = model_preset("Flan-T5-S").unwrap().reporting_inputs(RepKind::HiddenStates);
        let full = spin_train_flops(&i).unwrap();
        let share = (full - spin_train_flops_without_sigmoid(&i).unwrap()) / full;
        let (l, d) = (8.0, 512.0);
        let expect = 2.0 / (2.0 * d + 0.1 * d * (l + 1.0) + 2.0);
        assert!((share - expect).abs() < 1e-12);
        assert!(share > 1e-3);
    }

    #[test]
    fn table_and_csv() {
        let rows: Vec<CostRow> = model_presets()
            .iter()
            .map(|p| CostRow::new(&p.name, p.reporting_inputs(RepKind::Activations)).unwrap())
            .collect();
        let table = cost_table(&rows);
        assert_eq!(table.lines().count(), 9);
        assert_eq!(rows[0].to_csv().split(',').count(), COST_CSV_HEADER.split(',').count());
    }

    fn inputs() -> impl Strategy<Value = CostInputs> {
        (1u64..1_000_000_000, 1u64..64, 1u64..4096, 1u64..8192, 1u64..1024, 1u64..100_000, 1u64..2000, 0.001f64..1.0)
            .prop_map(|(p, l, h, d, t, s, i, r)| CostInputs {
                n_param_llm: p,
                n_layers: l,
                d_hs: h,
                d,
                n_token: t,
                n_sentences: s,
                max_iters: i,
                rho_eta: r,
            })
    }

    type Estimator = fn(&CostInputs) -> Result<f64>;
    const ESTIMATORS: [Estimator; 5] = [
        spin_trainable_params,
        llm_forward_flops,
        spin_train_flops,
        spin_train_flops_closed_form,
        finetune_flops_estimate,
    ];

    proptest! {
        #[test]
        fn monotone_in_every_input(i in inputs(), which in 0usize..8, bump in 1u64..10) {
            let mut j = i;
            match which {
                0 => j.n_param_llm += bump,
                1 => j.n_layers += bump,
                2 => j.d_hs += bump,
                3 => j.d += bump,
                4 => j.n_token += bump,
                5 => j.n_sentences += bump,
                6 => j.max_iters += bump,
                _ => j.rho_eta = (i.rho_eta + bump as f64 * 0.05).min(1.0),
            }
            for f in ESTIMATORS {
                prop_assert!(f(&i).unwrap() <= f(&j).unwrap());
            }
        }

        #[test]
        fn sigmoid_terms_marginal_for_wide_layers(mut i in inputs(), d in 1000u64..8192) {
            i.d = d;
            let full = spin_train_flops(&i).unwrap();
            let dropped = spin_train_flops_without_sigmoid(&i).unwrap();
            prop_assert!((full - dropped) / full < 1e-3);
        }
    }
}

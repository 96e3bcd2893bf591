use std::fs;

use clap::ValueEnum;
use spin_core::integrate::{
    ablation_random_selection, ablation_single_layer, evaluate, train_integrated, MetricsRow, METRICS_CSV_HEADER,
};
use spin_core::sparsify::build_salient_set;

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::run::{resolve_cell, salient_for, write_out};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum AblationMode {
    /// Random neurons in place of probe-ranked ones, per k in `ablation.random_k`.
    RandomSp,
    /// One head per layer in place of cross-layer integration.
    SingleLayer,
}

pub fn cmd_ablate(cfg: &RunConfig, mode: AblationMode) -> CliResult<()> {
    let dumps = cfg.load_dumps()?;
    let settings = cfg.pipeline();
    let cell = resolve_cell(cfg, &dumps, &settings)?;
    let train = &dumps.train[&cell.rep_kind];
    let test = &dumps.test[&cell.rep_kind];
    let n_layers = train.n_layers;

    let (name, text) = match mode {
        AblationMode::RandomSp => {
            let pooled = spin_core::integrate::PooledDump::new(train, cell.pooling)?;
            let probes = spin_core::integrate::train_layer_probes(&pooled, cell.lambda, &settings.probe_solver)?;
            let ranked = build_salient_set(&probes, 1.0)?;
            let mut text = format!("selection,k_per_layer,seed,{METRICS_CSV_HEADER}\n");
            for &k in &cfg.ablation.random_k {
                if k == 0 || k > train.dim {
                    eprintln!("skipping k = {k}: layers have {} neurons", train.dim);
                    continue;
                }
                let set = ranked.top_k(k);
                let clf = train_integrated(train, &set, cell.pooling, n_layers, &settings.head)?;
                let row = MetricsRow {
                    rep_kind: cell.rep_kind,
                    pooling: cell.pooling,
                    lambda: Some(cell.lambda),
                    eta: set.eta,
                    layer_cutoff: n_layers,
                    n_features: clf.n_features(),
                    metrics: evaluate(&clf, test)?,
                };
                text.push_str(&format!("lasso,{k},,{}\n", row.to_csv()));
                for &seed in &cfg.ablation.seeds {
                    let r = ablation_random_selection(train, test, cell.pooling, k, seed, &settings.head)?;
                    let row = MetricsRow {
                        rep_kind: cell.rep_kind,
                        pooling: cell.pooling,
                        lambda: None,
                        eta: r.selection.eta,
                        layer_cutoff: n_layers,
                        n_features: r.n_features,
                        metrics: r.report,
                    };
                    text.push_str(&format!("random,{k},{seed},{}\n", row.to_csv()));
                }
            }
            ("ablation_random_sp.csv", text)
        }
        AblationMode::SingleLayer => {
            let salient = salient_for(train, &cell, &settings)?;
            let report = ablation_single_layer(train, test, &salient, cell.pooling, &settings.head, settings.metric)?;
            let mut text = String::from("scope,layer,n_features,accuracy,macro_f1,best\n");
            for (layer, n_features, m) in &report.per_layer {
                text.push_str(&format!(
                    "single,{layer},{n_features},{},{},{}\n",
                    m.accuracy,
                    m.macro_f1,
                    *layer == report.best_layer
                ));
            }
            let clf = train_integrated(train, &salient, cell.pooling, n_layers, &settings.head)?;
            let m = evaluate(&clf, test)?;
            text.push_str(&format!(
                "integrated,,{},{},{},\n",
                clf.n_features(),
                m.accuracy,
                m.macro_f1
            ));
            ("ablation_single_layer.csv", text)
        }
    };
    fs::create_dir_all(&cfg.out_dir)?;
    write_out(&cfg.out_dir, name, &text)?;
    print!("{text}");
    Ok(())
}

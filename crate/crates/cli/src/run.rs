//! `run`, `early-exit` and `cv`: grid search and everything downstream of it.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use spin_core::evalstats::{cross_validate, grid_search, CellConfig, GridOutcome, PipelineSettings, GRID_CSV_HEADER};
use spin_core::integrate::{
    early_exit_curve, evaluate, train_layer_probes, train_on_layers, EarlyExitPoint, MetricsRow, PooledDump,
};
use spin_core::pooling::PoolingStrategy;
use spin_core::repstore::RepresentationDump;
use spin_core::sparsify::{build_salient_set, SalientSet};
use spin_core::Error;

use crate::config::{Dumps, RunConfig};
use crate::error::{CliError, CliResult};

pub fn write_out(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn csv(rows: impl IntoIterator<Item = MetricsRow>, val_or_test: &str) -> String {
    let mut out = format!("{GRID_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{val_or_test}\n", r.to_csv()));
    }
    out
}

fn check_convergence(cfg: &RunConfig, outcome: &GridOutcome) -> CliResult<()> {
    let stalled = outcome.ranked.iter().filter(|r| !r.converged).count();
    if stalled > 0 && cfg.fail_on_nonconverged {
        return Err(CliError::Numerical(format!(
            "{stalled} grid cells did not converge within {} iterations",
            cfg.solver.max_iters
        )));
    }
    if stalled > 0 {
        eprintln!("warning: {stalled} grid cells stopped at the iteration limit");
    }
    Ok(())
}

#[derive(Serialize)]
struct BestRecord {
    config: CellConfig,
    layer_cutoff: usize,
    n_features: usize,
    val_accuracy: f64,
    val_macro_f1: f64,
    converged: bool,
}

/// The configured cell, or the grid winner on the validation split.
pub fn resolve_cell(cfg: &RunConfig, dumps: &Dumps, settings: &PipelineSettings) -> CliResult<CellConfig> {
    if let Some(cell) = cfg.cell {
        return Ok(cell);
    }
    let outcome = grid_search(&dumps.train, &dumps.val, &cfg.grid, settings)?;
    check_convergence(cfg, &outcome)?;
    let cell = outcome.best_row().config;
    eprintln!("selected by grid search: {cell}");
    Ok(cell)
}

pub fn salient_for(train: &RepresentationDump, cell: &CellConfig, settings: &PipelineSettings) -> CliResult<SalientSet> {
    let pooled = PooledDump::new(train, cell.pooling)?;
    let probes = train_layer_probes(&pooled, cell.lambda, &settings.probe_solver)?;
    if cell_stalled(&probes) {
        eprintln!("warning: some probes stopped at the iteration limit");
    }
    Ok(build_salient_set(&probes, cell.eta)?)
}

fn cell_stalled(probes: &[spin_core::probe::ProbeModel]) -> bool {
    probes.iter().any(|p| !p.converged)
}

fn early_exit_rows(cell: &CellConfig, points: &[EarlyExitPoint]) -> Vec<MetricsRow> {
    points
        .iter()
        .map(|p| MetricsRow {
            rep_kind: cell.rep_kind,
            pooling: cell.pooling,
            lambda: Some(cell.lambda),
            eta: cell.eta,
            layer_cutoff: p.layer_cutoff,
            n_features: p.n_features,
            metrics: p.report,
        })
        .collect()
}

/// Every (pooling, eta, layer cutoff) at the given kind and lambda, scored on `eval`.
fn what_which_where(
    train: &RepresentationDump,
    eval: &RepresentationDump,
    poolings: &[PoolingStrategy],
    lambda: f64,
    etas: &[f64],
    settings: &PipelineSettings,
) -> CliResult<Vec<MetricsRow>> {
    let per_pooling = poolings
        .par_iter()
        .map(|&pooling| -> CliResult<Vec<MetricsRow>> {
            let tr = PooledDump::new(train, pooling)?;
            let ev = PooledDump::new(eval, pooling)?;
            let probes = train_layer_probes(&tr, lambda, &settings.probe_solver)?;
            let mut jobs = Vec::new();
            for &eta in etas {
                match build_salient_set(&probes, eta) {
                    Ok(set) => jobs.extend((1..=tr.n_layers()).map(|c| (eta, c, set.clone()))),
                    Err(Error::NoInformativeNeurons { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            jobs.par_iter()
                .map(|(eta, cutoff, set)| {
                    let layers: Vec<usize> = (0..*cutoff).collect();
                    let clf = train_on_layers(&tr, set, &layers, &settings.head)?;
                    Ok(MetricsRow {
                        rep_kind: train.rep_kind,
                        pooling,
                        lambda: Some(lambda),
                        eta: *eta,
                        layer_cutoff: *cutoff,
                        n_features: clf.n_features(),
                        metrics: clf.evaluate_pooled(&ev)?,
                    })
                })
                .collect::<Result<Vec<_>, Error>>()
                .map_err(CliError::from)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(per_pooling.into_iter().flatten().collect())
}

pub fn cmd_run(cfg: &RunConfig) -> CliResult<()> {
    let out = &cfg.out_dir;
    fs::create_dir_all(out)?;
    write_out(out, "config.echo", cfg.echo())?;
    let dumps = cfg.load_dumps()?;
    let settings = cfg.pipeline();

    let outcome = grid_search(&dumps.train, &dumps.val, &cfg.grid, &settings)?;
    check_convergence(cfg, &outcome)?;
    write_out(out, "grid.csv", outcome.to_csv("val"))?;
    write_out(out, "grid_skipped.csv", outcome.skipped_csv())?;

    let best = outcome.best_row();
    let cell = best.config;
    let record = BestRecord {
        config: cell,
        layer_cutoff: best.layer_cutoff,
        n_features: best.n_features,
        val_accuracy: best.metrics.accuracy,
        val_macro_f1: best.metrics.macro_f1,
        converged: best.converged,
    };
    let mut best_json = serde_json::to_string_pretty(&record).expect("record serializes");
    best_json.push('\n');
    write_out(out, "best_config.json", best_json)?;
    write_out(out, "best_classifier.bin", outcome.best.encode()?)?;
    write_out(out, "best_salient.txt", outcome.best.salient.to_text())?;
    write_out(out, "best_salient.weights", outcome.best.salient.encode_weights()?)?;

    let train = &dumps.train[&cell.rep_kind];
    let test = &dumps.test[&cell.rep_kind];
    let test_report = evaluate(&outcome.best, test)?;
    let test_row = MetricsRow {
        metrics: test_report,
        ..best.metrics_row()
    };
    write_out(out, "test_metrics.csv", csv([test_row], "test"))?;

    let points = early_exit_curve(
        train,
        test,
        &outcome.best.salient,
        cell.pooling,
        &cfg.early_exit_fractions,
        &settings.head,
    )?;
    write_out(out, "early_exit.csv", csv(early_exit_rows(&cell, &points), "test"))?;

    if cfg.www {
        let rows = what_which_where(
            train,
            &dumps.val[&cell.rep_kind],
            &cfg.grid.poolings,
            cell.lambda,
            &cfg.grid.etas,
            &settings,
        )?;
        write_out(out, "www.csv", csv(rows, "val"))?;
    }

    println!("cells evaluated: {} (skipped {})", outcome.ranked.len(), outcome.skipped.len());
    println!("best: {cell}");
    println!(
        "validation accuracy {} macro_f1 {}; test accuracy {} macro_f1 {}; {} features",
        best.metrics.accuracy, best.metrics.macro_f1, test_report.accuracy, test_report.macro_f1, best.n_features
    );
    println!("run directory: {}", out.display());
    Ok(())
}

pub fn cmd_early_exit(cfg: &RunConfig) -> CliResult<()> {
    let dumps = cfg.load_dumps()?;
    let settings = cfg.pipeline();
    let cell = resolve_cell(cfg, &dumps, &settings)?;
    let train = &dumps.train[&cell.rep_kind];
    let salient = salient_for(train, &cell, &settings)?;
    let points = early_exit_curve(
        train,
        &dumps.test[&cell.rep_kind],
        &salient,
        cell.pooling,
        &cfg.early_exit_fractions,
        &settings.head,
    )?;
    let text = csv(early_exit_rows(&cell, &points), "test");
    fs::create_dir_all(&cfg.out_dir)?;
    write_out(&cfg.out_dir, "early_exit.csv", &text)?;
    print!("{text}");
    Ok(())
}

fn concat(a: &RepresentationDump, b: &RepresentationDump) -> RepresentationDump {
    let mut all = a.clone();
    all.sentences.extend(b.sentences.iter().cloned());
    all
}

pub fn cmd_cv(cfg: &RunConfig) -> CliResult<()> {
    let dumps = cfg.load_dumps()?;
    let settings = cfg.pipeline();
    let cell = resolve_cell(cfg, &dumps, &settings)?;
    let all = concat(&dumps.train[&cell.rep_kind], &dumps.val[&cell.rep_kind]);
    if cfg.cv.k > all.n_sentences() {
        return Err(CliError::Config(format!(
            "cv.k = {} exceeds the {} train+val sentences",
            cfg.cv.k,
            all.n_sentences()
        )));
    }
    let result = cross_validate(&all, &cell, &settings, &cfg.cv)?;
    let text = format!("config: {cell}\nmetric: {}\n{}", settings.metric, result.to_text());
    fs::create_dir_all(&cfg.out_dir)?;
    write_out(&cfg.out_dir, "cv.txt", &text)?;
    print!("{text}");
    Ok(())
}

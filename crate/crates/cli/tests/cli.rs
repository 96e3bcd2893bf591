use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_spin");

fn spin(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().expect("spawn spin")
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SYNTH: &str = r#"{
  "synthetic": {"n_layers": 4, "dim": 24, "n_sentences": 240, "tokens_min": 2, "tokens_max": 5,
                "planted": {"1": [2, 9], "2": [5]}, "signal_strength": 1.5, "noise_std": 1.0},
  "val_sentences": 120, "test_sentences": 160, "out_dir": "data"
}"#;

fn run_config(extra: &str) -> String {
    format!(
        r#"{{
  "dumps": {{"hidden_states": {{"train": "data/synthetic_hidden_states_train.spin",
                               "val": "data/synthetic_hidden_states_val.spin",
                               "test": "data/synthetic_hidden_states_test.spin"}}}},
  "out_dir": "out"{extra}
}}"#
    )
}

fn workspace(run_extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("synth.json"), SYNTH).unwrap();
    fs::write(dir.path().join("run.json"), run_config(run_extra)).unwrap();
    ok(&spin(&["synth", "synth.json"], dir.path()));
    dir
}

const SMALL_GRID: &str = r#",
  "grid": {"rep_kinds": ["hidden_states"], "poolings": ["max", "avg"], "lambdas": [0.01, 0.1], "etas": [0.5, 1.0]},
  "ablation": {"random_k": [1, 3], "seeds": [0, 1, 2]}"#;

const SINGLE_CELL: &str = r#",
  "grid": {"rep_kinds": ["hidden_states"], "poolings": ["max"], "lambdas": [0.01], "etas": [0.5]},
  "cell": {"rep_kind": "hidden_states", "pooling": "max", "lambda": 0.01, "eta": 0.5},
  "cv": {"k": 4, "stratify": true}"#;

#[test]
fn synth_is_deterministic() {
    let a = workspace("");
    let b = workspace("");
    for split in ["train", "val", "test"] {
        let name = format!("data/synthetic_hidden_states_{split}.spin");
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
    }
    let out = ok(&spin(&["inspect", "data/synthetic_hidden_states_val.spin"], a.path()));
    assert!(out.contains("n_sentences: 120"));
    assert!(out.contains("split: validation"));
}

#[test]
fn synth_missing_field_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.json"), r#"{"synthetic": {"n_layers": 2}, "out_dir": "x"}"#).unwrap();
    let o = spin(&["synth", "s.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing field"));
}

#[test]
fn run_singleton_reaches_high_test_accuracy() {
    let dir = workspace(SINGLE_CELL);
    ok(&spin(&["run", "run.json"], dir.path()));
    let out = dir.path().join("out");
    for f in [
        "config.echo",
        "grid.csv",
        "grid_skipped.csv",
        "best_config.json",
        "best_classifier.bin",
        "best_salient.txt",
        "test_metrics.csv",
        "early_exit.csv",
        "www.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let test = fs::read_to_string(out.join("test_metrics.csv")).unwrap();
    let row: Vec<&str> = test.lines().nth(1).unwrap().split(',').collect();
    let acc: f64 = row[6].parse().unwrap();
    assert!(acc >= 0.95, "test accuracy {acc}");
    assert_eq!(row[8], "test");
    let early = fs::read_to_string(out.join("early_exit.csv")).unwrap();
    assert_eq!(early.lines().count(), 6);

    let tok = ok(&spin(
        &["tokenwise", "--classifier", "out/best_classifier.bin", "--dump", "data/synthetic_hidden_states_test.spin", "--sentence", "3"],
        dir.path(),
    ));
    assert!(tok.starts_with("token,p_0,p_1,predicted"));
    assert!(tok.lines().count() >= 3);
}

#[test]
fn rerun_from_echo_is_byte_identical_across_job_counts() {
    let dir = workspace(SMALL_GRID);
    ok(&spin(&["--jobs", "1", "run", "run.json"], dir.path()));
    ok(&spin(&["--jobs", "4", "run", "out/config.echo", "--out", "again"], dir.path()));
    for f in ["grid.csv", "grid_skipped.csv", "test_metrics.csv", "early_exit.csv", "www.csv", "best_classifier.bin"] {
        let a = fs::read(dir.path().join("out").join(f)).unwrap();
        let b = fs::read(dir.path().join("again").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    let grid = fs::read_to_string(dir.path().join("out/grid.csv")).unwrap();
    let skipped = fs::read_to_string(dir.path().join("out/grid_skipped.csv")).unwrap();
    assert_eq!(grid.lines().count() - 1 + skipped.lines().count() - 1, 8);
}

#[test]
fn activations_without_dumps_exit_2() {
    let dir = workspace(r#", "grid": {"rep_kinds": ["activations"]}"#);
    let o = spin(&["run", "run.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("activations"));
}

#[test]
fn ablation_outputs() {
    let dir = workspace(SMALL_GRID);
    let random = ok(&spin(&["ablate", "run.json", "--mode", "random_sp"], dir.path()));
    // header + 2 k values x (1 lasso + 3 random)
    assert_eq!(random.lines().count(), 1 + 2 * 4);
    assert_eq!(random.lines().filter(|l| l.starts_with("lasso,")).count(), 2);
    let single = ok(&spin(&["ablate", "run.json", "--mode", "single_layer"], dir.path()));
    assert_eq!(single.lines().count(), 1 + 4 + 1);
    assert_eq!(single.lines().filter(|l| l.ends_with(",true")).count(), 1);
    assert!(dir.path().join("out/ablation_single_layer.csv").is_file());

    let o = spin(&["ablate", "run.json", "--mode", "everything"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cost_preset_matches_explicit_flags() {
    let dir = tempfile::tempdir().unwrap();
    let preset = ok(&spin(&["cost", "--preset", "DistilBERT", "--kind", "hidden_states", "--csv"], dir.path()));
    let explicit = ok(&spin(
        &["cost", "--n-param", "66955010", "--n-layers", "6", "--d-hs", "768", "--csv"],
        dir.path(),
    ));
    let strip = |s: &str| s.lines().nth(1).unwrap().split_once(',').unwrap().1.to_string();
    assert_eq!(strip(&preset), strip(&explicit));
    assert!(strip(&preset).starts_with("6,768,0.1,"));
    let listed = ok(&spin(&["cost", "--all", "--csv"], dir.path()));
    assert_eq!(listed.lines().count(), 9);

    let o = spin(&["cost", "--n-param", "10", "--n-layers", "2", "--d-hs", "4", "--rho", "-0.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = spin(&["cost", "--preset", "no-such-model"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cv_output_and_bad_k() {
    let dir = workspace(SINGLE_CELL);
    let out = ok(&spin(&["cv", "run.json"], dir.path()));
    assert!(out.contains("folds:"));
    let p: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("p: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(p < 1e-3, "p = {p}");
    assert!(dir.path().join("out/cv.txt").is_file());

    fs::write(dir.path().join("bad.json"), run_config(r#", "cv": {"k": 1}"#)).unwrap();
    let o = spin(&["cv", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inspect_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("junk.spin"), b"not a dump at all").unwrap();
    let o = spin(&["inspect", "junk.spin"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let o = spin(&["inspect", "absent.spin"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

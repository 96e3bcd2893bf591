use std::collections::BTreeMap;

use spin_core::evalstats::{cross_validate, grid_search, CellConfig, CvSettings, GridSpace, PipelineSettings};
use spin_core::integrate::{early_exit_curve, evaluate, predict_tokenwise, IntegratedClassifier};
use spin_core::pooling::PoolingStrategy;
use spin_core::repstore::{generate_synthetic, read_dump, write_dump, RepKind, SyntheticConfig};
use spin_core::sparsify::SalientSet;

fn config(seed_offset: u64) -> SyntheticConfig {
    let mut cfg = SyntheticConfig::planted_in_layers(3, 24, 300, [0, 2], &[5, 11], 1.5);
    cfg.rep_kind = if seed_offset % 2 == 0 {
        RepKind::HiddenStates
    } else {
        RepKind::Activations
    };
    cfg
}

#[test]
fn dump_files_through_grid_to_test_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut train = BTreeMap::new();
    let mut val = BTreeMap::new();
    for (i, kind) in RepKind::ALL.into_iter().enumerate() {
        let cfg = config(i as u64);
        for (split, seed, map) in [("train", 10, &mut train), ("val", 20, &mut val)] {
            let path = dir.path().join(format!("{kind}-{split}.spin"));
            write_dump(&generate_synthetic(&cfg, seed + i as u64).unwrap(), &path).unwrap();
            map.insert(kind, read_dump(&path).unwrap());
        }
    }
    let space = GridSpace {
        rep_kinds: RepKind::ALL.to_vec(),
        poolings: vec![PoolingStrategy::Max, PoolingStrategy::Avg],
        lambdas: vec![0.01, 0.1],
        etas: vec![0.2, 0.6],
    };
    let settings = PipelineSettings::default();
    let out = grid_search(&train, &val, &space, &settings).unwrap();
    assert_eq!(out.ranked.len() + out.skipped.len(), space.n_cells());

    let best = out.best_row();
    let kind = best.config.rep_kind;
    let test = generate_synthetic(&config(u64::from(kind == RepKind::Activations)), 99).unwrap();
    let report = evaluate(&out.best, &test).unwrap();
    assert!(report.accuracy >= 0.95, "{report:?}");

    let blob = out.best.encode().unwrap();
    let back = IntegratedClassifier::decode(&blob).unwrap();
    assert_eq!(evaluate(&back, &test).unwrap(), report);

    let sidecar = out.best.salient.encode_weights().unwrap();
    let restored = SalientSet::from_text(&out.best.salient.to_text(), &sidecar).unwrap();
    assert_eq!(restored, out.best.salient);

    let curve = early_exit_curve(
        &train[&kind],
        &test,
        &out.best.salient,
        best.config.pooling,
        &[1.0 / 3.0, 1.0],
        &settings.head,
    )
    .unwrap();
    assert_eq!(curve[1].report, report);
    assert!(curve[0].n_features <= curve[1].n_features);

    if matches!(best.config.pooling, PoolingStrategy::Max | PoolingStrategy::Avg) {
        let per_token = predict_tokenwise(&out.best, &test, 0).unwrap();
        assert_eq!(per_token.len(), test.sentences[0].n_tokens);
    }
}

#[test]
fn cross_validation_beats_chance() {
    let dump = generate_synthetic(&config(0), 5).unwrap();
    let cell = CellConfig {
        rep_kind: RepKind::HiddenStates,
        pooling: PoolingStrategy::Avg,
        lambda: 0.01,
        eta: 0.5,
    };
    let cv = CvSettings {
        k: 5,
        seed: 3,
        baseline: 0.5,
        stratify: true,
    };
    let r = cross_validate(&dump, &cell, &PipelineSettings::default(), &cv).unwrap();
    assert_eq!(r.fold_metrics.len(), 5);
    assert!(r.mean > 0.9);
    assert!(r.p_value < 1e-3);
    assert!(r.to_text().contains("p: "));
}

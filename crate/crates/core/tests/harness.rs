use lscs::harness::{
    aggregate, presets, pooled_nmse, run, run_static_experiment, write_csv, write_outputs, CellSummary, Experiment,
    ExperimentConfig, MetricsRow, StaticCell, StaticTableConfig, Summary, CSRES_METHOD,
};

fn csv_bytes(cfg: &ExperimentConfig) -> Vec<Vec<u8>> {
    run(cfg)
        .unwrap()
        .tables
        .iter()
        .map(|t| {
            let mut buf = Vec::new();
            write_csv(&mut buf, &t.rows).unwrap();
            buf
        })
        .collect()
}

fn short_stability(trials: usize, seed: u64) -> ExperimentConfig {
    let mut seq = presets::stability_sequence(12);
    seq.checks = None;
    ExperimentConfig {
        experiment: Experiment::Stability(seq),
        seed,
        trials,
    }
}

#[test]
fn reruns_are_bit_identical() {
    let cfg = short_stability(3, 11);
    let a = csv_bytes(&cfg);
    assert!(!a.is_empty());
    assert_eq!(a, csv_bytes(&cfg));
    let other = csv_bytes(&short_stability(3, 12));
    assert_ne!(a, other);
}

#[test]
fn static_with_full_known_support_is_exact() {
    let cfg = StaticTableConfig {
        m: 60,
        support_size: 6,
        misses: 0,
        extras: 0,
        cells: vec![StaticCell { n: 30, sigma: 1e-9 }],
        csres_lambda_factor: 4.0,
        ds_lambda_factors: vec![4.0],
    };
    let (_, summary) = run_static_experiment(&cfg, 3, 4).unwrap();
    let cell: &CellSummary = &summary.cells[0];
    assert!(cell.nmse[CSRES_METHOD] < 1e-12, "{:?}", cell.nmse);
}

#[test]
fn static_rows_are_one_per_trial_and_method() {
    let mut cfg = presets::static_table(2, 5);
    if let Experiment::StaticTable(c) = &mut cfg.experiment {
        c.cells.truncate(1);
    }
    let out = run(&cfg).unwrap();
    assert_eq!(out.tables.len(), 4);
    for t in &out.tables {
        let per_trial = t.rows.iter().filter(|r| r.trial.is_some()).count();
        assert_eq!(per_trial, 2);
        assert!(t.rows.iter().any(|r| r.trial.is_none()));
    }
}

#[test]
fn noiseless_bounds_hold() {
    let mut cfg = presets::bound_validation(40, 4);
    if let Experiment::BoundValidation(c) = &mut cfg.experiment {
        c.noise_c = 0.0;
        c.lambda = Some(1e-3);
    }
    let out = run(&cfg).unwrap();
    let Summary::BoundValidation(r) = out.summary else {
        panic!("wrong summary")
    };
    assert!(!r.optimistic);
    assert!(r.valid_instances > 0);
    assert!(r.violations.is_empty(), "{:?}", r.violations);
    assert!(r.checked.get("theorem1").copied().unwrap_or(0) > 0);
}

#[test]
fn pooled_nmse_is_ratio_of_sums() {
    let rows = vec![
        MetricsRow {
            trial: Some(0),
            t: 0,
            method: "m".into(),
            err: 1.0,
            energy: 2.0,
            misses: 0.0,
            extras: 0.0,
            support_size: 1.0,
            err_csres: None,
        },
        MetricsRow {
            trial: Some(1),
            t: 0,
            method: "m".into(),
            err: 3.0,
            energy: 6.0,
            misses: 2.0,
            extras: 0.0,
            support_size: 1.0,
            err_csres: None,
        },
    ];
    assert!((pooled_nmse(&rows, 0) - 0.5).abs() < 1e-15);
    let agg = aggregate(&rows);
    assert_eq!(agg.len(), 1);
    assert!(agg[0].trial.is_none());
    assert!((agg[0].misses - 1.0).abs() < 1e-15);
}

#[test]
fn outputs_and_manifest_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_stability(2, 1);
    let out = run(&cfg).unwrap();
    let manifest = write_outputs(&cfg, &out, dir.path()).unwrap();
    assert!(!manifest.files.is_empty());
    for f in &manifest.files {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.starts_with("trial,"), "{f}");
        assert!(text.contains("\nall,"), "{f}");
    }
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["kind"], "stability");
    assert_eq!(m["seed"], 1);
}

#[test]
fn bad_configs_are_config_errors() {
    let bad = [
        r#"{"kind":"nope","seed":1,"trials":1}"#,
        r#"not json"#,
    ];
    for s in bad {
        assert!(ExperimentConfig::from_json(s).unwrap_err().is_config(), "{s}");
    }
    let mut cfg = presets::bound_validation(3, 1);
    if let Experiment::BoundValidation(c) = &mut cfg.experiment {
        c.m = 15;
    }
    assert!(run(&cfg).err().unwrap().is_config());
    let mut cfg = presets::static_table(3, 1);
    if let Experiment::StaticTable(c) = &mut cfg.experiment {
        c.cells[0].sigma = -1.0;
    }
    assert!(cfg.validate().unwrap_err().is_config());
}

use normsep::harness::{
    analyze_dir, read_records, read_run, read_sweep, run_sweep, run_training, write_records, write_report, write_sweep,
    ExperimentConfig, SweepAxis, SweepSpec,
};

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        p: 5,
        max_steps: 40,
        eval_every: 5,
        spectral_every: 10,
        post_grok_steps: 10,
        ..Default::default()
    };
    c.model.d_e = 4;
    c.model.hidden = 8;
    c
}

#[test]
fn run_directory_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let record = run_training(&tiny()).unwrap();
    assert!(!record.checkpoints.is_empty());
    write_records(std::slice::from_ref(&record), dir.path()).unwrap();
    let back = read_run(&dir.path().join(&record.run_id)).unwrap();
    assert_eq!(back, record);
    assert_eq!(read_records(dir.path()).unwrap(), vec![record]);
}

#[test]
fn config_json_round_trips() {
    let mut cfg = tiny();
    cfg.apply_overrides(&["lambda=0.25", "seed=9"]).unwrap();
    assert_eq!((cfg.lambda, cfg.seed), (0.25, 9));
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
}

#[test]
fn sweep_and_report_share_one_layout() {
    let dir = tempfile::tempdir().unwrap();
    let sweep_dir = dir.path().join("lambda");
    let spec = SweepSpec {
        axis: SweepAxis::Lambda,
        values: vec!["0.5".into(), "1.0".into()],
        seeds: vec![0, 1],
        jobs: 1,
        thresholds: Default::default(),
    };
    let (result, records) = run_sweep(&tiny(), &spec).unwrap();
    assert_eq!(records.len(), 4);
    write_sweep(&result, &records, &sweep_dir).unwrap();
    assert_eq!(read_sweep(&sweep_dir).unwrap(), result);

    let analysis = analyze_dir(dir.path()).unwrap();
    assert_eq!(analysis.groups.len(), 1);
    assert_eq!(analysis.groups[0].name, "lambda");
    assert_eq!(analysis.groups[0].runs, 4);

    let out = dir.path().join("report");
    let files = write_report(dir.path(), &out).unwrap();
    for f in &files {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(files.contains(&"lambda_summary.csv".to_string()));
    let mut rd = csv::Reader::from_path(out.join("regimes.csv")).unwrap();
    assert_eq!(rd.records().count(), 2);
    let mut rd = csv::Reader::from_path(out.join("lambda_summary.csv")).unwrap();
    assert_eq!(rd.records().count(), 4);
}

#[test]
fn missing_trajectory_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let record = run_training(&tiny()).unwrap();
    write_records(std::slice::from_ref(&record), dir.path()).unwrap();
    let run_dir = dir.path().join(&record.run_id);
    std::fs::remove_file(run_dir.join("trajectory.csv")).unwrap();
    let err = read_run(&run_dir).unwrap_err();
    assert!(err.to_string().contains("trajectory.csv"), "{err}");
}

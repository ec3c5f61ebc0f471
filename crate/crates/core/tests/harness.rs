use rfx::explorer::{ExploreConfig, ExploreMode};
use rfx::harness::{rows_from_csv, run_experiment, Checks, ExperimentSpec, InstanceSpec, RewardSpec, SetSpec};

fn chain_spec(seeds: Vec<u64>, n: usize) -> ExperimentSpec {
    ExperimentSpec {
        schema_version: 1,
        name: "chain".into(),
        instance: InstanceSpec::Bundled { name: "chain3".into() },
        explore: ExploreConfig {
            n_override: Some(n),
            mode: ExploreMode::Tabular,
            threshold_scale: 0.0,
            ..ExploreConfig::default()
        },
        sets: SetSpec::TabularEnum,
        rewards: RewardSpec::Random { count: 4, seed: 11 },
        seeds,
        checks: Checks::default(),
        output: None,
    }
}

#[test]
fn one_seed_gives_rows_with_h_deployments() {
    let report = run_experiment::<f64>(&chain_spec(vec![3], 200)).unwrap();
    assert_eq!(report.rows.len(), 4);
    for r in &report.rows {
        assert!(r.ok(), "{r:?}");
        assert_eq!(r.deployments, 3);
        assert_eq!(r.episodes, 600);
        assert_eq!(r.decomposition_holds, Some(true));
        assert_eq!(r.unc_monotone, Some(true));
        assert_eq!(r.reward_free, Some(true));
        assert!(r.gap.unwrap() >= -1e-12);
    }
    assert!(report.summary.seeds[0].compliant);
}

#[test]
fn same_seeds_give_identical_reports_and_csv_round_trips() {
    let a = run_experiment::<f64>(&chain_spec(vec![1, 2], 100)).unwrap();
    let b = run_experiment::<f64>(&chain_spec(vec![1, 2], 100)).unwrap();
    let csv = a.to_csv().unwrap();
    assert_eq!(csv, b.to_csv().unwrap());
    assert_eq!(
        serde_json::to_string(&a.summary).unwrap(),
        serde_json::to_string(&b.summary).unwrap()
    );
    assert_eq!(rows_from_csv(&csv).unwrap(), a.rows);
}

#[test]
fn failed_stage_is_recorded_per_reward() {
    let mut spec = chain_spec(vec![0], 50);
    spec.explore.threshold_scale = 1.0;
    let report = run_experiment::<f64>(&spec).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert!(report.all_failed());
    assert!(report.rows.iter().all(|r| r.stage == "explore"));
}

#[test]
fn writes_outputs_into_the_configured_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = chain_spec(vec![5], 60);
    spec.output = Some(dir.path().to_path_buf());
    run_experiment::<f64>(&spec).unwrap();
    for f in [
        "report.csv",
        "summary.json",
        "timings.json",
        "seed-5/dataset.jsonl",
        "seed-5/dataset.jsonl.meta.json",
        "seed-5/log.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let lines = std::fs::read_to_string(dir.path().join("seed-5/dataset.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 180);
}

#[test]
fn spec_json_rejects_unknown_fields_and_empty_seeds() {
    let ok = r#"{"instance":{"kind":"bundled","name":"chain3"},"rewards":{"kind":"instance"},"seeds":[1]}"#;
    ExperimentSpec::from_json(ok).unwrap();
    let extra =
        r#"{"instance":{"kind":"bundled","name":"chain3"},"rewards":{"kind":"instance"},"seeds":[1],"bogus":1}"#;
    assert!(ExperimentSpec::from_json(extra).is_err());
    let none = r#"{"instance":{"kind":"bundled","name":"chain3"},"rewards":{"kind":"instance"},"seeds":[]}"#;
    assert!(ExperimentSpec::from_json(none).is_err());
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rfx(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfx"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RFX_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rfx(&["validate", "--bogus"], dir.path()).status.code(), Some(64));
    assert_eq!(rfx(&["--help"], dir.path()).status.code(), Some(0));
    for sub in [
        "generate-mdp",
        "validate",
        "explore",
        "plan",
        "design",
        "run",
        "report",
        "build-set",
    ] {
        assert_eq!(rfx(&[sub, "--help"], dir.path()).status.code(), Some(0), "{sub}");
    }
}

#[test]
fn validate_lists_violations_of_a_corrupted_file() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = dir.path().join("chain.json");
    assert!(rfx(
        &[
            "generate-mdp",
            "--kind",
            "bundled",
            "--name",
            "chain3",
            "--out",
            s(&mdp)
        ],
        dir.path()
    )
    .status
    .success());
    assert!(rfx(&["validate", "--mdp", s(&mdp)], dir.path()).status.success());

    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&mdp).unwrap()).unwrap();
    doc["measures"][0][0][0] = serde_json::json!(3.0);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, doc.to_string()).unwrap();
    let out = rfx(&["validate", "--mdp", s(&bad)], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("normalization"));
}

#[test]
fn design_on_the_symmetric_problem_is_certified() {
    let dir = tempfile::tempdir().unwrap();
    let out = rfx(&["design", "--bundled", "symmetric", "--d", "3"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["g"].as_f64().unwrap() <= 3.0 * 1.05);
    assert_eq!(v["certified"], serde_json::json!(true));
}

#[test]
fn run_twice_gives_byte_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let spec = data("symmetric2.json");
    let mut reports = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(format!("out{k}"));
        let out = rfx(
            &["run", "--spec", s(&spec), "--out", s(&out_dir), "--seed", "4,5"],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push(fs::read(out_dir.join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let csv = String::from_utf8(reports[0].clone()).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 5);

    let out = rfx(&["report", "--csv", s(&dir.path().join("out0/report.csv"))], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"], serde_json::json!(10));
    assert_eq!(v["compliant"], serde_json::json!(true));
}

#[test]
fn run_uses_the_output_directory_variable() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rfx"))
        .args(["run", "--spec", s(&data("symmetric2.json"))])
        .env("RFX_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("report.csv").is_file());
    assert!(dir.path().join("seed-0/dataset.jsonl").is_file());
}

#[test]
fn explore_then_plan_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f);
    assert!(rfx(
        &[
            "generate-mdp",
            "--kind",
            "random-linear",
            "--d",
            "3",
            "--states",
            "4",
            "--actions",
            "2",
            "--horizon",
            "2",
            "--seed",
            "3",
            "--out",
            s(&p("mdp.json"))
        ],
        dir.path()
    )
    .status
    .success());
    fs::write(
        p("config.json"),
        r#"{"n_override": 100, "threshold_scale": 0.0, "exp_budget": 20}"#,
    )
    .unwrap();
    let out = rfx(
        &[
            "explore",
            "--mdp",
            s(&p("mdp.json")),
            "--config",
            s(&p("config.json")),
            "--out-dataset",
            s(&p("data.jsonl")),
            "--out-log",
            s(&p("log.json")),
            "--seed",
            "1",
            "--eval-budget",
            "10",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(p("data.jsonl")).unwrap().lines().count(), 200);

    assert!(rfx(
        &[
            "build-set",
            "--mdp",
            s(&p("mdp.json")),
            "--kind",
            "eval",
            "--epsilon",
            "0.5",
            "--budget",
            "10",
            "--out",
            s(&p("eval.json"))
        ],
        dir.path()
    )
    .status
    .success());
    fs::write(
        p("rewards.json"),
        "[[[0.2, 0.4, 0.6], [1.0, 0.0, 0.5]], [[0, 0, 0], [0, 0, 0]]]",
    )
    .unwrap();
    let out = rfx(
        &[
            "plan",
            "--dataset",
            s(&p("data.jsonl")),
            "--mdp",
            s(&p("mdp.json")),
            "--rewards",
            s(&p("rewards.json")),
            "--eval-set",
            s(&p("eval.json")),
            "--out",
            s(&p("plan.json")),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plans: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("plan.json")).unwrap()).unwrap();
    assert_eq!(plans.as_array().unwrap().len(), 2);
    assert_eq!(plans[1]["chosen_index"], serde_json::json!(0));

    // A dataset edited after the fact no longer matches its checksum sidecar.
    let text = fs::read_to_string(p("data.jsonl")).unwrap();
    fs::write(
        p("data.jsonl"),
        text.lines().skip(1).collect::<Vec<_>>().join("\n") + "\n",
    )
    .unwrap();
    let out = rfx(
        &[
            "plan",
            "--dataset",
            s(&p("data.jsonl")),
            "--mdp",
            s(&p("mdp.json")),
            "--rewards",
            s(&p("rewards.json")),
            "--eval-set",
            s(&p("eval.json")),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infeasible_exploration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f);
    assert!(rfx(
        &[
            "generate-mdp",
            "--kind",
            "bundled",
            "--name",
            "chain3",
            "--out",
            s(&p("mdp.json"))
        ],
        dir.path()
    )
    .status
    .success());
    fs::write(p("config.json"), r#"{"n_override": 50, "mode": "tabular"}"#).unwrap();
    let out = rfx(
        &["explore", "--mdp", s(&p("mdp.json")), "--config", s(&p("config.json"))],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn bundled_specs_parse() {
    for f in ["chain3.json", "random_linear.json", "hard.json", "symmetric2.json"] {
        let spec = rfx::harness::ExperimentSpec::from_json(&fs::read_to_string(data(f)).unwrap()).unwrap();
        assert!(!spec.seeds.is_empty(), "{f}");
    }
}

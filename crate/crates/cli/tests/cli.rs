use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "n=30",
    "--set",
    "view_size=5",
    "--set",
    "bootstrap_size=6",
    "--set",
    "rounds=5",
    "--set",
    "seed_refresh.seeds_per_refresh=2",
];

fn byzgossip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_byzgossip")).args(args).output().unwrap()
}

fn run_small(extra: &[&str]) -> Output {
    let mut args = vec!["run"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    byzgossip(&args)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(&["--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "round,f_in_out,f_in_in,B_t,b_t,hssr,f1_mean,f1_std,messages_sent");
    assert_eq!(lines.len(), 6);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rounds"], 5);
    assert_eq!(summary["config"]["n"], 30);
}

#[test]
fn run_without_out_streams_csv_to_stdout() {
    let out = run_small(&["--seed", "9"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.starts_with("round,"));
}

#[test]
fn same_seed_same_bytes_other_seed_differs() {
    let a = run_small(&["--seed", "4"]).stdout;
    let b = run_small(&["--seed", "4"]).stdout;
    let c = run_small(&["--seed", "5"]).stdout;
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn config_file_and_overrides_layer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"n": 30, "view_size": 5, "bootstrap_size": 6, "rounds": 3, "seed_refresh": {"interval": 1, "seeds_per_refresh": 2}}"#).unwrap();
    let out_dir = dir.path().join("out");
    std::fs::create_dir(&out_dir).unwrap();
    let out = byzgossip(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--set",
        "rounds=4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn config_errors_exit_with_one() {
    let unknown_preset = run_small(&["--preset", "rq9-nothing"]);
    assert_eq!(unknown_preset.status.code(), Some(1));
    assert!(stderr(&unknown_preset).contains("rq9-nothing"));

    let zero_rounds = run_small(&["--set", "rounds=0"]);
    assert_eq!(zero_rounds.status.code(), Some(1));
    assert!(stderr(&zero_rounds).contains("rounds"));

    let unknown_key = run_small(&["--set", "colour=blue"]);
    assert_eq!(unknown_key.status.code(), Some(1));

    let missing_file = byzgossip(&["run", "--config", "/definitely/not/here.json"]);
    assert_eq!(missing_file.status.code(), Some(1));

    let bad_flag = byzgossip(&["run", "--frobnicate"]);
    assert_eq!(bad_flag.status.code(), Some(1));
}

#[test]
fn missing_output_directory_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    let out = run_small(&["--out", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent"));
}

#[test]
fn sweep_runs_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&[
        "--grid",
        "aggregator=cs,gts",
        "--grid",
        "byzantine_fraction=0.0,0.2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let out = byzgossip(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let index = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(index.lines().count(), 5);
    for k in 0..4 {
        assert!(Path::new(&dir.path().join(format!("run-{k:03}")).join("metrics.csv")).exists());
    }
}

#[test]
fn sweep_rejects_invalid_points_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--grid", "rounds=2,0", "--out", dir.path().to_str().unwrap()]);
    let out = byzgossip(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("run-000").exists());
}

#[test]
fn presets_are_listed_and_accepted() {
    let out = byzgossip(&["presets"]);
    assert_eq!(out.status.code(), Some(0));
    let names = String::from_utf8(out.stdout).unwrap();
    assert!(names.lines().any(|l| l == "rq1-foe-f01"));
    let run = run_small(&["--preset", "rq6-basalt-f03", "--set", "rounds=3", "--set", "n=40"]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lanecbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanecbf")).args(args).output().expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_trace_summary_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s1");
    let res = lanecbf(&["simulate", "--scenario", "1", "--out", arg(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["outcome"], "lane_change_success");
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3001);
    assert!(fs::read_to_string(out.join("snapshots.csv")).unwrap().starts_with("t,vehicle,x,y,v"));
}

#[test]
fn scenario_three_trace_has_a_back_left_episode() {
    let dir = tempfile::tempdir().unwrap();
    let res = lanecbf(&["simulate", "--scenario", "3", "--out", arg(dir.path())]);
    assert!(res.status.success());
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.lines().any(|l| l.split(',').nth(8) == Some("BL")));
}

#[test]
fn bad_selector_and_bad_file_fail_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    assert!(!lanecbf(&["simulate", "--scenario", "4", "--out", arg(&out)]).status.success());
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "name = \"broken\"\ndt = [").unwrap();
    let res = lanecbf(&["simulate", "--scenario-file", arg(&bad), "--out", arg(&out)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("error"));
    assert!(!out.exists());
}

#[test]
fn scenario_file_round_trips_through_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s2.toml");
    assert!(lanecbf(&["scenario", "--typical", "2", "--out", arg(&file)]).status.success());
    let out = dir.path().join("run");
    let res = lanecbf(&["simulate", "--scenario-file", arg(&file), "--out", arg(&out), "--duration", "10"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(fs::read_to_string(out.join("trace.csv")).unwrap().lines().count(), 1001);
}

#[test]
fn random_reports_are_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let res = lanecbf(&["random", "--env", "highway", "--runs", "6", "--seed", "3", "--workers", workers, "--out", arg(&out), "--duration", "20"]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        (fs::read(out.join("report.json")).unwrap(), fs::read(out.join("ledger.csv")).unwrap())
    };
    assert_eq!(run("one", "1"), run("three", "3"));
}

#[test]
fn single_run_ledger_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let res = lanecbf(&["random", "--env", "urban", "--runs", "1", "--out", arg(dir.path()), "--strict-traffic"]);
    assert!(res.status.success());
    let ledger = fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 2);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["collisions"], 0);
    assert_eq!(report["outcomes"].as_object().unwrap().len(), 4);
}

#[test]
fn check_fails_on_negative_gain_and_creates_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gains.toml");
    fs::write(&cfg, "[gains]\ngamma_fc = -1.0\n").unwrap();
    let out = dir.path().join("missing/acceptance");
    let res = lanecbf(&["check", "--out", arg(&out), "--config", arg(&cfg), "--runs", "2"]);
    assert!(!res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("[FAIL] 1") && stdout.contains("gamma_fc"), "{stdout}");
    assert!(out.join("acceptance.json").exists());
}

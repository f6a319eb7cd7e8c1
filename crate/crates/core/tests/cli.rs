use std::path::Path;
use std::process::{Command, Output};

use mergesim::dataio::{load, road_for};

fn mergesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mergesim")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    format!("{}/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"))
}

fn simulate(config: &str, out: &Path) -> Output {
    mergesim(&["simulate", "--config", config, "--out", out.to_str().unwrap()])
}

fn outcome(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("outcome.json")).unwrap()).unwrap()
}

#[test]
fn bundled_scenarios_merge() {
    let dir = tempfile::tempdir().unwrap();
    for (name, latest) in [("empty_road", 2.0), ("five_vehicle", 4.0)] {
        let out = dir.path().join(name);
        let run = simulate(&scenario(name), &out);
        assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
        let o = outcome(&out);
        assert_eq!(o["verdict"], "merged_success");
        assert!(o["merge_time"].as_f64().unwrap() <= latest);
        for f in ["trace.csv", "beliefs.csv"] {
            assert!(out.join(f).exists(), "{f} missing");
        }
    }
}

#[test]
fn malformed_config_exits_one_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, "{\"vehicles\": [ {\"id\": 0 } ]").unwrap();
    let out = dir.path().join("out");
    let run = simulate(config.to_str().unwrap(), &out);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("error"));
    assert!(!out.exists());

    let missing = simulate(dir.path().join("none.json").to_str().unwrap(), &out);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn failure_verdict_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("late.json");
    std::fs::write(
        &config,
        r#"{"name": "late", "vehicles": [
            {"id": 0, "initial": {"x": 250.0, "y": 1.75, "v_x": 25.0}, "controller": {"kind": "planner"}}
        ]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = simulate(config.to_str().unwrap(), &out);
    assert_eq!(run.status.code(), Some(2));
    assert_eq!(outcome(&out)["verdict"], "ramp_end_failure");
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let run = mergesim(&[
            "simulate",
            "--config",
            &scenario("blocked_gap"),
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(run.status.code(), Some(0));
    }
    for f in ["trace.csv", "beliefs.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn generated_data_replays() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    let gen = mergesim(&["gen-scenarios", "--episodes", "4", "--out", d]);
    assert_eq!(gen.status.code(), Some(0));
    for f in ["synthetic.csv", "synthetic.road.json", "sealed.csv", "slow_leaders.csv", "five_vehicle.json"] {
        assert!(data.join(f).exists(), "{f} missing");
    }

    let out = dir.path().join("benign");
    let csv = data.join("synthetic.csv");
    let run = mergesim(&["replay-eval", "--data", csv.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stdout));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.lines().nth(1).unwrap().starts_with("synthetic,4,4,"));
    assert_eq!(std::fs::read_to_string(out.join("verdicts.csv")).unwrap().lines().count(), 5);

    let out = dir.path().join("sealed");
    let csv = data.join("sealed.csv");
    let run = mergesim(&["replay-eval", "--data", csv.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert_eq!(stdout.matches("ramp_end_failure").count(), 4, "{stdout}");

    // written files read back through the loader
    let csv = data.join("synthetic.csv");
    let rec = load(&csv).unwrap();
    let road = road_for(&csv, &rec).unwrap();
    assert_eq!(road.ramp_end_x, 300.0);
}

#[test]
fn infer_reports_beliefs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(mergesim(&["gen-scenarios", "--episodes", "2", "--out", data.to_str().unwrap()]).status.code(), Some(0));
    let csv = data.join("synthetic.csv");
    let out = dir.path().join("out");
    let run = mergesim(&["infer", "--data", csv.to_str().unwrap(), "--vehicle", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&run.stdout).lines().count(), 3);
    let beliefs = std::fs::read_to_string(out.join("beliefs.csv")).unwrap();
    let header = beliefs.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 24);
    for row in beliefs.lines().skip(1) {
        let total: f64 = row.split(',').skip(2).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    let run = mergesim(&["infer", "--data", csv.to_str().unwrap(), "--vehicle", "9999", "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn reproduce_writes_side_by_side_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(mergesim(&["gen-scenarios", "--out", data.to_str().unwrap()]).status.code(), Some(0));
    let csv = data.join("slow_leaders.csv");
    let out = dir.path().join("out");
    let run = mergesim(&[
        "reproduce",
        "--data",
        csv.to_str().unwrap(),
        "--vehicle",
        "1",
        "--sigma",
        "competitive",
        "--weights",
        "0,1,0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("final deviation"));
    let trace = std::fs::read_to_string(out.join("reproduce.csv")).unwrap();
    assert!(trace.lines().next().unwrap().ends_with("action,collision"));
    assert!(trace.lines().count() > 2);
}

#[test]
fn bad_arguments_exit_one() {
    let run = mergesim(&[
        "reproduce", "--data", "x.csv", "--vehicle", "1", "--sigma", "egoistic", "--weights", "1,0",
    ]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("three values"));
    assert_eq!(mergesim(&["simulate", "--format", "xml"]).status.code(), Some(1));
    assert_eq!(mergesim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mergesim(&["--help"]).status.code(), Some(0));
}

use std::path::PathBuf;
use std::process::Command;

use realign::report::load_report;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.json"))
}

fn realign() -> Command {
    Command::new(env!("CARGO_BIN_EXE_realign"))
}

#[test]
fn run_writes_a_consistent_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let csv = dir.path().join("m.csv");
    let status = realign()
        .args(["run", "--scenario"])
        .arg(scenario("laptop_moved"))
        .arg("--out")
        .arg(&out)
        .arg("--metrics-csv")
        .arg(&csv)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report = load_report(&out).unwrap();
    assert!(report.is_consistent());
    assert_eq!(report.metrics.corrections, 1);
    assert!(std::fs::read_to_string(csv).unwrap().starts_with("scenario,seed,outcome"));
}

#[test]
fn schema_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut text = std::fs::read_to_string(scenario("aligned")).unwrap();
    text = text.replacen("\"name\"", "\"nmae\": \"x\", \"name\"", 1);
    std::fs::write(&bad, text).unwrap();
    let output = realign().args(["validate", "--scenario"]).arg(&bad).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("nmae"));

    let status = realign()
        .args(["run", "--scenario"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("r.json"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn validate_accepts_every_shipped_scenario() {
    for name in ["aligned", "laptop_moved", "missing_feature", "new_object"] {
        let status = realign().args(["validate", "--scenario"]).arg(scenario(name)).status().unwrap();
        assert_eq!(status.code(), Some(0), "{name}");
    }
}

#[test]
fn exhausted_budget_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let status = realign()
        .args(["run", "--scenario"])
        .arg(scenario("laptop_moved"))
        .arg("--out")
        .arg(dir.path().join("r.json"))
        .args(["--force-naive-update", "--steps", "2"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    realign()
        .args(["run", "--scenario"])
        .arg(scenario("aligned"))
        .arg("--out")
        .arg(&out)
        .args(["--seed", "42", "--policy", "conservative"])
        .status()
        .unwrap();
    assert_eq!(load_report(&out).unwrap().seed, 42);
}

#[test]
fn sweep_runs_a_directory() {
    let src = tempfile::tempdir().unwrap();
    for name in ["aligned", "laptop_moved"] {
        std::fs::copy(scenario(name), src.path().join(format!("{name}.json"))).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    let status = realign()
        .args(["sweep", "--scenarios"])
        .arg(src.path())
        .arg("--out")
        .arg(out.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for name in ["aligned", "laptop_moved"] {
        assert!(load_report(out.path().join(format!("{name}.report.json"))).unwrap().is_consistent());
    }
    let csv = std::fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 + 2);
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ve")).args(args).output().unwrap()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/cohort.csv")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Matches the fixture three ways and returns the directory holding
/// all.csv, a.csv and b.csv.
fn matched_fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture();
    for (name, version) in [("all", None), ("a", Some("a")), ("b", Some("b"))] {
        let out = dir.path().join(format!("{name}.csv"));
        let mut args = vec!["match", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()];
        if let Some(v) = version {
            args.extend(["--version", v]);
        }
        stdout(&ve(&args));
    }
    dir
}

fn version_args(dir: &Path) -> Vec<String> {
    ["all", "a", "b"]
        .iter()
        .flat_map(|n| [format!("--input-{n}"), dir.join(format!("{n}.csv")).display().to_string()])
        .collect()
}

#[test]
fn amplify_prints_gamma() {
    assert_eq!(stdout(&ve(&["amplify", "--lambda", "2", "--delta", "2"])), "1.25\n");
    assert_eq!(stdout(&ve(&["amplify", "--lambda", "3", "--delta", "5"])), "2\n");
}

#[test]
fn ci_reports_every_interval() {
    let dir = matched_fixture();
    let mut args = vec!["ci".to_string(), "--alpha".into(), "0.05".into()];
    args.extend(version_args(dir.path()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let doc: serde_json::Value = serde_json::from_str(&stdout(&ve(&args))).unwrap();
    assert_eq!(doc["schema"], "1");
    let intervals = doc["results"][0]["intervals"].as_array().unwrap();
    let labels: Vec<&str> = intervals.iter().map(|i| i["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["Ic", "Ia", "Ib", "Iv", "Istar"]);
    let bound = |k: usize, side: &str| intervals[k][side].as_f64().unwrap();
    assert_eq!(bound(3, "lo"), bound(0, "lo").min(bound(1, "lo")).min(bound(2, "lo")));
    assert_eq!(bound(3, "hi"), bound(0, "hi").max(bound(1, "hi")).max(bound(2, "hi")));
}

#[test]
fn plotdata_rows_per_gamma() {
    let dir = matched_fixture();
    let mut args = vec!["plotdata".to_string(), "--gamma".into(), "1".into(), "--gamma".into(), "1.5".into()];
    args.extend(version_args(dir.path()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let csv = stdout(&ve(&args));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "label,lo,hi,gamma");
    assert_eq!(lines.len(), 11);
    assert!(lines[10].starts_with("Istar,") && lines[10].ends_with(",1.5"));
}

#[test]
fn test_and_balance_emit_json() {
    let dir = matched_fixture();
    let all = dir.path().join("all.csv");
    let all = all.to_str().unwrap();
    let t: serde_json::Value =
        serde_json::from_str(&stdout(&ve(&["test", "--input", all, "--tau0", "-0.1", "--null", "normal"]))).unwrap();
    assert_eq!(t["schema"], "1");
    assert_eq!(t["method"]["method"], "normal");
    let b: serde_json::Value = serde_json::from_str(&stdout(&ve(&["balance", "--input", all]))).unwrap();
    assert_eq!(b["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_is_byte_identical() {
    let args = ["simulate", "--taub", "0.25", "--ratio-a", "1.0", "--reps", "1000", "--seed", "7"];
    let first = ve(&args);
    let second = Command::new(env!("CARGO_BIN_EXE_ve"))
        .args(args)
        .env("VE_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(stdout(&first), stdout(&second));
    assert!(stdout(&first).starts_with("tau_b,ratio_a,tau_a,delta,"));
}

#[test]
fn failures_have_distinct_exit_codes() {
    let code = |o: Output| {
        let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
        assert_eq!(err["exit_code"].as_i64().unwrap(), i64::from(o.status.code().unwrap()));
        o.status.code().unwrap()
    };
    let bad_flag = code(ve(&["amplify", "--lambda", "0.5", "--delta", "2"]));
    let missing = code(ve(&["test", "--input", "/nonexistent/cohort.csv"]));
    let input = fixture();
    let infeasible = code(ve(&["match", "--input", input.to_str().unwrap(), "--caliper", "1e-9"]));

    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "id,treated,outcome,set_id\na,1,0,7\nb,1,0,7\nc,0,0,7\nd,0,0,7\n").unwrap();
    let invalid = ve(&["test", "--input", broken.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("set 7"));
    let invalid = code(invalid);

    let codes = [bad_flag, missing, infeasible, invalid];
    assert_eq!(codes, [2, 3, 5, 4]);
}

#[test]
fn help_shows_defaults() {
    let help = stdout(&ve(&["simulate", "--help"]));
    assert!(help.contains("[default: 1000]") && help.contains("[default: 0.05]"));
    let help = stdout(&ve(&["match", "--help"]));
    assert!(help.contains("[default: 6:6]"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn doram(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_doram")).args(args).current_dir(dir).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = doram(&["run", "--scheme", "three_server", "--n", "64", "--len", "300", "--out", "o"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("o");
    let results = fs::read_to_string(dir.join("results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 300);
    for line in results.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["oracle"], true);
    }
    for srv in 0..3 {
        assert!(dir.join(format!("transcript_{srv}.jsonl")).exists());
    }
    let report = fs::read_to_string(dir.join("report.csv")).unwrap();
    assert!(report.starts_with("accessIndex,bitsUp,bitsDown,cumulativeOverhead"));
    assert_eq!(report.lines().count(), 301);
}

#[test]
fn run_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = doram(&["run", "--scheme", "m_server", "--m", "3", "--n", "64", "--len", "200", "--seed", "9", "--out", out], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["results.jsonl", "transcript_0.jsonl", "transcript_2.jsonl", "report.csv"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn run_accepts_trace_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("t.txt"), "# demo\nW 3 ff\nR 3\nR 7\n").unwrap();
    let o = doram(&["run", "--scheme", "four_server", "--n", "64", "--trace", "t.txt", "--out", "o"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let results = fs::read_to_string(tmp.path().join("o/results.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = results.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1]["value"].as_str().unwrap().starts_with("ff"));
}

#[test]
fn unknown_scheme_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = doram(&["run", "--scheme", "five_server", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scheme"));

    fs::write(tmp.path().join("c.json"), r#"{"scheme":"bogus","N":64,"B":1024,"d":4}"#).unwrap();
    let o = doram(&["run", "--config", "c.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scheme"));
}

#[test]
fn out_of_range_address_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("t.txt"), "R 64\n").unwrap();
    let o = doram(&["run", "--scheme", "three_server", "--n", "64", "--trace", "t.txt", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_passes_and_catches_mutation() {
    let tmp = tempfile::tempdir().unwrap();
    let o = doram(&["verify", "--scheme", "three_server", "--n", "64", "--len", "256", "--out", "v"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("v/verify.json").exists());

    let o = doram(&["verify", "--scheme", "three_server", "--n", "64", "--len", "0"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let o = doram(&["verify", "--scheme", "three_server", "--n", "64", "--len", "256", "--mutate", "no_dummy_substitution"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn bench_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = doram(&["bench", "--scheme", "three_server", "--sweep", "64,256", "--len", "0", "--out", "b"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("b/bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "scheme,N,d,B,measuredOverhead,predictedOverhead,residual");
    assert_eq!(lines.count(), 2);
}

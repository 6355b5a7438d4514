use std::path::Path;
use std::process::{Command, Output};

fn dcmz(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcmz"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &[&str] = &[
    "--task", "seq-desk", "--n-train", "20", "--n-validation", "5", "--n-test", "10", "--mask-steps", "8",
    "--seq-length", "8", "--iterations", "20", "--batch-size", "4", "--retrain-iterations", "40",
    "--random-scales", "0.1",
];

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(TINY.iter().copied()).collect()
}

#[test]
fn train_then_eval_and_retrain() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcmz(dir.path(), &with_tiny(&["train"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let masks = dir.path().join("train").join("final.bin");
    assert!(masks.exists());
    assert!(dir.path().join("train").join("losses.csv").exists());

    let m = masks.to_str().unwrap();
    let o = dcmz(dir.path(), &with_tiny(&["eval", "--masks", m]));
    assert!(o.status.success());
    assert!(stdout(&o).contains("on 10 examples"), "{}", stdout(&o));

    let o = dcmz(dir.path(), &with_tiny(&["retrain", "--masks", m, "--twin"]));
    assert!(o.status.success());
    assert!(stdout(&o).contains("twin_reuse_error"));
}

#[test]
fn run_all_writes_reports_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcmz(dir.path(), &with_tiny(&["run", "--scenario", "all"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for s in ["optimized", "shuffled", "random", "twin"] {
        let json = std::fs::read_to_string(dir.path().join(s).join("report.json")).unwrap();
        assert!(json.contains("\"schema_version\": 1"), "{json}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn shuffled_without_trained_masks_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcmz(dir.path(), &with_tiny(&["run", "--scenario", "shuffled"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("optimized"));
}

#[test]
fn synth_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.seq");
    let f = file.to_str().unwrap();
    let o = dcmz(dir.path(), &with_tiny(&["data", "synth", "--file", f]));
    assert!(o.status.success());
    let o = dcmz(dir.path(), &["data", "inspect", f]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("39"), "{}", stdout(&o));
}

#[test]
fn export_trace_for_each_model() {
    let dir = tempfile::tempdir().unwrap();
    for model in ["fast", "twin", "oracle"] {
        let file = dir.path().join(format!("{model}.csv"));
        let o = dcmz(
            dir.path(),
            &with_tiny(&["export-trace", "--model", model, "--index", "1", "--file", file.to_str().unwrap()]),
        );
        assert!(o.status.success(), "{model}: {}", String::from_utf8_lossy(&o.stderr));
        let rows = std::fs::read_to_string(&file).unwrap().lines().count();
        assert!(rows > 8 * 8, "{model}: {rows} rows");
    }
}

#[test]
fn checks_and_gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcmz(dir.path(), &["check", "coefficients"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("coefficients: pass"));
    let o = dcmz(dir.path(), &["gradcheck", "--n-mask", "4", "--streaming"]);
    assert_eq!(o.status.code(), Some(0));
    let o = dcmz(dir.path(), &["check", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

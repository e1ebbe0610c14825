use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn edgesel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgesel"))
        .args(args)
        .output()
        .expect("spawn edgesel")
}

fn ok(args: &[&str]) -> String {
    let out = edgesel(args);
    assert!(
        out.status.success(),
        "edgesel {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_writes_long_format_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&[
        "gen",
        "--preset",
        "replay10",
        "--frames",
        "30",
        "--seed",
        "7",
        "-o",
        p(&a),
    ]);
    ok(&[
        "gen",
        "--preset",
        "replay10",
        "--frames",
        "30",
        "--seed",
        "7",
        "-o",
        p(&b),
    ]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("frame,server,latency_s"));
    assert_eq!(lines.count(), 30 * 10);

    let c = dir.path().join("c.csv");
    ok(&[
        "gen",
        "--preset",
        "replay10",
        "--frames",
        "30",
        "--seed",
        "8",
        "-o",
        p(&c),
    ]);
    assert_ne!(text, fs::read_to_string(&c).unwrap());
}

#[test]
fn unknown_preset_lists_available() {
    let dir = tempfile::tempdir().unwrap();
    let out = edgesel(&[
        "gen",
        "--preset",
        "nope",
        "-o",
        p(&dir.path().join("x.csv")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["testbed3", "replay10", "heteroscedastic2"] {
        assert!(err.contains(name), "stderr lacks {name}: {err}");
    }
}

#[test]
fn run_logs_one_row_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let log = dir.path().join("log.csv");
    ok(&[
        "gen",
        "--preset",
        "testbed3",
        "--frames",
        "80",
        "-o",
        p(&trace),
    ]);
    let stdout = ok(&[
        "run",
        "--trace",
        p(&trace),
        "--policy",
        "hybrid_risk",
        "-o",
        p(&log),
    ]);
    assert!(stdout.contains("policy=hybrid_risk"), "{stdout}");
    let text = fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), 1 + 80);
    assert!(text.starts_with("frame,selected,switched,"));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(log.with_extension("json")).unwrap()).unwrap();
    assert_eq!(metrics["metrics"]["frames"], 80);
}

#[test]
fn missing_trace_names_the_path() {
    let out = edgesel(&["run", "--trace", "/definitely/not/here.csv"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/definitely/not/here.csv"), "{err}");
}

#[test]
fn timeline_on_constant_trace_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("const.csv");
    let mut text = String::from("frame,server,latency_s\n");
    for t in 0..40 {
        for s in 0..3 {
            text.push_str(&format!("{t},{s},0.3\n"));
        }
    }
    fs::write(&trace, text).unwrap();
    let log = dir.path().join("log.csv");
    ok(&["run", "--trace", p(&trace), "-o", p(&log)]);
    let timeline = ok(&["timeline", "--log", p(&log), "--span", "2:40"]);
    let mut lines = timeline.lines();
    assert_eq!(lines.next(), Some("frame,selected_server"));
    let selected: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(selected.len(), 38);
    assert!(selected.iter().all(|&s| s == selected[0]), "{selected:?}");
}

#[test]
fn compare_prints_all_policies() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    ok(&["gen", "--preset", "testbed3", "-o", p(&trace)]);
    let table = ok(&["compare", "--trace", p(&trace)]);
    for label in [
        "Mean-only Baseline",
        "Hybrid Risk Eval.",
        "Percentile + Hysteresis",
    ] {
        assert!(table.contains(label), "{table}");
    }
}

#[test]
fn config_file_rejects_unknown_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "preset = testbed3\nwidnow_w = 20\n").unwrap();
    let out = edgesel(&["run", "--config", p(&cfg)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("widnow_w") && err.contains('2'), "{err}");
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dcaseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcaseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dcaseg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_SPEC: &str = r#"{
  "duration_ticks": 300,
  "seed": 5,
  "background": {"pamp_level": 2, "danger_level": 10, "safe_level": 55, "noise_stdev": 5},
  "antigen_sources": [
    {"antigen_type": "scan", "label": "anomalous", "base_rate": 1.0},
    {"antigen_type": "web", "label": "normal", "base_rate": 6.0}
  ],
  "phases": [
    {"start_tick": 100, "end_tick": 160, "pamp_level": 60, "danger_level": 50,
     "safe_level": 8, "noise_stdev": 5, "rate_multipliers": {"scan": 10}}
  ]
}"#;

/// Writes the small spec and generates a stream from it.
fn small_stream(dir: &TempDir) -> PathBuf {
    let spec = dir.path().join("spec.json");
    fs::write(&spec, SMALL_SPEC).unwrap();
    let stream = dir.path().join("small.evt");
    ok(&["generate", "--spec", s(&spec), "-o", s(&stream)]);
    stream
}

#[test]
fn generate_writes_stream_labels_and_scenario() {
    let dir = TempDir::new().unwrap();
    let stream = small_stream(&dir);
    let text = fs::read_to_string(&stream).unwrap();
    assert!(text.lines().all(|l| l.starts_with("A,") || l.starts_with("S,")));
    assert_eq!(text.lines().filter(|l| l.starts_with("S,")).count(), 300);
    let labels = fs::read_to_string(dir.path().join("small.labels")).unwrap();
    assert_eq!(labels, "scan,anomalous\nweb,normal\n");
    assert!(dir.path().join("small.scenario.json").exists());
}

#[test]
fn generation_and_runs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let stream = small_stream(&dir);
    let first = fs::read(&stream).unwrap();
    let again = dir.path().join("again.evt");
    ok(&["generate", "--spec", s(&dir.path().join("spec.json")), "-o", s(&again)]);
    assert_eq!(first, fs::read(&again).unwrap());

    let a = ok(&["run", "-i", s(&stream), "--mode", "abs", "--size", "50"]);
    let b = ok(&["run", "-i", s(&stream), "--mode", "abs", "--size", "50"]);
    assert_eq!(a, b);
    assert!(a.starts_with("{\"kind\":\"meta\""));
    assert!(a.contains("\"seed\":5"), "seed recovered from the scenario sidecar");
}

#[test]
fn overlapping_phases_are_rejected() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("bad.json");
    let overlapping = SMALL_SPEC.replace(
        r#""rate_multipliers": {"scan": 10}}"#,
        r#""rate_multipliers": {"scan": 10}},
    {"start_tick": 150, "end_tick": 200, "pamp_level": 60, "danger_level": 50,
     "safe_level": 8, "noise_stdev": 5}"#,
    );
    fs::write(&spec, overlapping).unwrap();
    let out = dcaseg(&["generate", "--spec", s(&spec), "-o", s(&dir.path().join("x.evt"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("phases overlap"));
    assert!(!dir.path().join("x.evt").exists());
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let dir = TempDir::new().unwrap();
    assert_eq!(dcaseg(&[]).status.code(), Some(1));
    assert_eq!(dcaseg(&["--help"]).status.code(), Some(0));
    assert_eq!(dcaseg(&["run", "--mode", "abs"]).status.code(), Some(1));

    let stream = small_stream(&dir);
    let run = |extra: &[&str]| {
        let mut args = vec!["run", "-i", s(&stream)];
        args.extend_from_slice(extra);
        dcaseg(&args).status.code()
    };
    assert_eq!(run(&["--mode", "abs", "--size", "0"]), Some(1));
    assert_eq!(run(&["--mode", "sliding", "--size", "10"]), Some(1));
    assert_eq!(run(&["--mode", "abs"]), Some(1), "size is required for abs");
    assert_eq!(run(&["--population", "0"]), Some(1));

    let broken = dir.path().join("broken.evt");
    fs::write(&broken, "S,0,1,1,1\nA,1,x\nS,1,1,1,140\n").unwrap();
    let out = dcaseg(&["run", "-i", s(&broken)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let unordered = dir.path().join("unordered.evt");
    fs::write(&unordered, "S,5,1,1,1\nS,4,1,1,1\n").unwrap();
    assert_eq!(dcaseg(&["run", "-i", s(&unordered)]).status.code(), Some(2));
}

#[test]
fn tbs_size_one_reports_every_tick() {
    let dir = TempDir::new().unwrap();
    let stream = small_stream(&dir);
    let out = ok(&["run", "-i", s(&stream), "--mode", "tbs", "--size", "1"]);
    let segments = out.lines().filter(|l| l.starts_with("{\"kind\":\"segment\"")).count();
    assert_eq!(segments, 300);
}

#[test]
fn table_output_marks_empty_segments() {
    let dir = TempDir::new().unwrap();
    let stream = dir.path().join("sparse.evt");
    fs::write(&stream, "A,0,x\nS,0,0,0,100\nS,9,0,0,0\n").unwrap();
    let out = ok(&[
        "run",
        "-i",
        s(&stream),
        "--mode",
        "tbs",
        "--size",
        "5",
        "--format",
        "table",
        "--population",
        "1",
    ]);
    let rows: Vec<Vec<&str>> = out
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().collect())
        .collect();
    assert_eq!(rows[0].last(), Some(&"x"));
    assert_eq!(rows[1], ["0", "0", "4", "1", "1", "-1300.000000"]);
    assert_eq!(rows[2], ["1", "5", "9", "0", "0", "-"]);
}

fn sweep(dir: &TempDir, stream: &Path, sizes: &str) -> (PathBuf, Vec<String>) {
    let out = dir.path().join("sweep");
    ok(&[
        "sweep",
        "-i",
        s(stream),
        "--mode",
        "abs",
        "--sizes",
        sizes,
        "-o",
        s(&out),
    ]);
    let reports = sizes
        .split(',')
        .map(|n| s(&out.join(format!("abs_{n}.jsonl"))).to_string())
        .collect();
    (out, reports)
}

#[test]
fn sweep_writes_reports_and_summary() {
    let dir = TempDir::new().unwrap();
    let stream = small_stream(&dir);
    let (out, reports) = sweep(&dir, &stream, "10,50,200");
    for r in &reports {
        assert!(Path::new(r).exists(), "{r}");
    }
    let summary = fs::read_to_string(out.join("summary_abs.txt")).unwrap();
    for t in ["scan", "web"] {
        assert!(summary.contains(t), "{summary}");
    }
}

#[test]
fn compare_grid_has_every_pair_and_flags_missing_data() {
    let dir = TempDir::new().unwrap();
    let stream = small_stream(&dir);
    let base = dir.path().join("base.jsonl");
    ok(&["run", "-i", s(&stream), "--mode", "none", "-o", s(&base)]);
    // the largest size leaves a single segment, so its cells cannot be tested
    let (_, reports) = sweep(&dir, &stream, "10,20,40,80,100000");
    let labels = dir.path().join("small.labels");
    let mut args = vec![
        "compare",
        "--baseline",
        s(&base),
        "--labels",
        s(&labels),
        "--format",
        "jsonl",
    ];
    args.extend(reports.iter().map(String::as_str));
    let grid = ok(&args);
    for t in ["scan", "web"] {
        let pairs = grid
            .lines()
            .filter(|l| l.contains("\"kind\":\"pairwise\"") && l.contains(&format!("\"antigen_type\":\"{t}\"")))
            .count();
        assert_eq!(pairs, 10, "{t}");
    }
    args.retain(|a| *a != "--format" && *a != "jsonl");
    let table = ok(&args);
    assert!(table.contains("n/a"), "{table}");
}

#[test]
fn identical_reports_are_never_significant() {
    let dir = TempDir::new().unwrap();
    let stream = small_stream(&dir);
    let base = dir.path().join("base.jsonl");
    let rep = dir.path().join("abs.jsonl");
    ok(&["run", "-i", s(&stream), "--mode", "none", "-o", s(&base)]);
    ok(&["run", "-i", s(&stream), "--mode", "abs", "--size", "20", "-o", s(&rep)]);
    let grid = ok(&[
        "compare",
        "--baseline",
        s(&base),
        "--direction",
        "scan=greater,web=less",
        "--format",
        "jsonl",
        s(&rep),
        s(&rep),
    ]);
    let pairwise: Vec<&str> = grid.lines().filter(|l| l.contains("\"kind\":\"pairwise\"")).collect();
    assert_eq!(pairwise.len(), 2);
    for line in pairwise {
        assert!(
            line.contains("\"p_value\":1.0") && line.contains("\"significant\":false"),
            "{line}"
        );
    }
}

#[test]
fn compare_requires_directions_for_every_type() {
    let dir = TempDir::new().unwrap();
    let stream = small_stream(&dir);
    let base = dir.path().join("base.jsonl");
    let rep = dir.path().join("abs.jsonl");
    ok(&["run", "-i", s(&stream), "--mode", "none", "-o", s(&base)]);
    ok(&["run", "-i", s(&stream), "--mode", "abs", "--size", "20", "-o", s(&rep)]);
    let out = dcaseg(&[
        "compare",
        "--baseline",
        s(&base),
        "--direction",
        "scan=greater",
        s(&rep),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("web"));
    // a segmented report is not a baseline
    let out = dcaseg(&[
        "compare",
        "--baseline",
        s(&rep),
        "--direction",
        "scan=greater,web=less",
        s(&rep),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn baseline_missing_a_type_is_an_error() {
    let dir = TempDir::new().unwrap();
    let only_web = dir.path().join("web.evt");
    fs::write(&only_web, "A,0,web\nS,0,0,0,100\n").unwrap();
    let both = dir.path().join("both.evt");
    fs::write(
        &both,
        "A,0,web\nA,0,scan\nA,0,scan\nS,0,0,0,100\nA,1,scan\nS,1,90,0,0\n",
    )
    .unwrap();
    let base = dir.path().join("base.jsonl");
    let rep = dir.path().join("rep.jsonl");
    ok(&[
        "run",
        "-i",
        s(&only_web),
        "--mode",
        "none",
        "--population",
        "1",
        "-o",
        s(&base),
    ]);
    ok(&[
        "run",
        "-i",
        s(&both),
        "--mode",
        "abs",
        "--size",
        "1",
        "--population",
        "1",
        "-o",
        s(&rep),
    ]);
    let out = dcaseg(&[
        "compare",
        "--baseline",
        s(&base),
        "--direction",
        "scan=greater,web=less",
        s(&rep),
    ]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scan"));
}

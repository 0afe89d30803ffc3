use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_stiction");

const TINY: &str = r#"
[loop]
kp = 0.3
ti = 0.5
process_tau = 30.0
noise_sigma = 0.01
seed = 100

[stiction]
deadband_s = 5.0
slip_jump_j = 0.5

[alternating]
episode_minutes = 1440
total_minutes = 5760

[labeling]
n_consecutive = 6
pv_slope_epsilon = 0.01

[architecture]
reduce = 8

[train]
max_epochs = 3
learning_rate = 0.003
patience = 2
seed = 5
class_weight = "balanced"
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env("STICTION_LOG", "error").output().expect("spawn stiction")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// simulate → label → dataset → train → detect → evaluate in `dir`.
fn pipeline(dir: &Path) {
    std::fs::write(dir.join("tiny.toml"), TINY).unwrap();
    ok(dir, &["simulate", "--config", "tiny.toml", "--out", "sim"]);
    ok(dir, &["label", "--method", "slope_ratio", "--in", "sim/series.csv", "--out", "labels.csv", "--config", "tiny.toml"]);
    ok(dir, &["dataset", "--mode", "detect", "--series", "sim/series.csv", "--labels", "labels.csv", "--out", "ds.sgw"]);
    ok(dir, &["train", "--arch", "lstm", "--dataset", "ds.sgw", "--out", "lstm.bin", "--config", "tiny.toml"]);
    ok(dir, &["detect", "--model", "lstm.bin", "--dataset", "ds.sgw", "--out", "trace.csv"]);
    ok(dir, &["evaluate", "--trace", "trace.csv", "--out", "report.txt"]);
}

const DATA_OUTPUTS: &[&str] = &[
    "sim/series.csv",
    "sim/ground_truth.csv",
    "labels.csv",
    "ds.sgw",
    "lstm.bin",
    "lstm.bin.history.csv",
    "trace.csv",
    "trace.csv.metrics.txt",
    "report.txt",
];

#[test]
fn pipeline_is_deterministic_and_rerunnable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in DATA_OUTPUTS {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }

    let report = std::fs::read_to_string(a.path().join("report.txt")).unwrap();
    assert_eq!(report, std::fs::read_to_string(a.path().join("trace.csv.metrics.txt")).unwrap());
    assert!(report.starts_with("tp: "));
    let trace = std::fs::read_to_string(a.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("window_index,start_timestamp,actual,predicted,probability"));

    let manifest = std::fs::read_to_string(a.path().join("lstm.bin.manifest.toml")).unwrap();
    let parsed: toml::Table = toml::from_str(&manifest).unwrap();
    assert_eq!(parsed["command"].as_str(), Some("train"));
    assert_eq!(parsed["seed"].as_integer(), Some(5));
    assert_eq!(parsed["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(parsed["outputs"].as_array().unwrap().len(), 2);
    assert_eq!(parsed["config"]["train"]["max_epochs"].as_integer(), Some(3));

    for m in ["sim/manifest.toml", "labels.csv.manifest.toml", "lstm.bin.manifest.toml", "trace.csv.manifest.toml"] {
        ok(a.path(), &["rerun", "--manifest", m, "--check"]);
    }

    // A changed input is refused before anything runs.
    std::fs::write(a.path().join("labels.csv"), "tampered").unwrap();
    let out = run(a.path(), &["rerun", "--manifest", "ds.sgw.manifest.toml"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[InputChanged]"));
}

#[test]
fn demo_config_runs_end_to_end_through_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let demo = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/demo.toml");
    ok(d, &["simulate", "--config", demo, "--out", "sim"]);
    ok(d, &["ingest", "--op", "sim/op.csv", "--pv", "sim/pv.csv", "--out", "series.csv"]);
    assert_eq!(std::fs::read(d.join("series.csv")).unwrap(), std::fs::read(d.join("sim/series.csv")).unwrap());
    ok(d, &["label", "--method", "slope_ratio", "--in", "series.csv", "--out", "default.csv"]);
    ok(d, &["label", "--method", "slope_ratio", "--in", "series.csv", "--out", "n24.csv", "--n", "24"]);
    assert_eq!(std::fs::read(d.join("default.csv")).unwrap(), std::fs::read(d.join("n24.csv")).unwrap());
    ok(d, &["label", "--method", "slope_ratio", "--in", "series.csv", "--out", "labels.csv", "--config", demo]);
    ok(d, &["dataset", "--mode", "detect", "--series", "series.csv", "--labels", "labels.csv", "--out", "ds.sgw", "--config", demo]);
    ok(d, &["train", "--arch", "lstm", "--dataset", "ds.sgw", "--out", "lstm.bin", "--config", demo]);
    ok(d, &["detect", "--model", "lstm.bin", "--dataset", "ds.sgw", "--out", "trace.csv"]);
    ok(d, &["evaluate", "--trace", "trace.csv", "--out", "report.txt"]);
    let report = std::fs::read_to_string(d.join("report.txt")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("accuracy: ")));
}

#[test]
fn predict_mode_heatmap_and_hybrid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    ok(d, &["simulate", "--config", "tiny.toml", "--out", "sim"]);
    ok(d, &["label", "--method", "ground_truth", "--in", "sim/series.csv", "--ground-truth", "sim/ground_truth.csv", "--out", "gt.csv"]);
    ok(d, &["label", "--method", "t2", "--in", "sim/series.csv", "--out", "t2.csv", "--percentile", "80"]);
    ok(
        d,
        &[
            "dataset",
            "--mode",
            "predict",
            "--series",
            "sim/series.csv",
            "--labels",
            "gt.csv",
            "--detect",
            "2",
            "--lookahead",
            "3",
            "--out",
            "p.sgw",
        ],
    );
    ok(d, &["train", "--arch", "cnn_svm", "--dataset", "p.sgw", "--out", "h.bin", "--config", "tiny.toml"]);
    ok(d, &["predict", "--model", "h.bin", "--dataset", "p.sgw", "--out", "p.csv", "--split", "all", "--report", "p.txt"]);
    assert!(d.join("p.txt").exists());

    let out = run(d, &["detect", "--model", "h.bin", "--dataset", "p.sgw", "--out", "x.csv"]);
    assert_eq!(code(&out), 2, "detect on a predict dataset is a usage error");
    assert!(!d.join("x.csv").exists());

    ok(
        d,
        &[
            "heatmap",
            "--arch",
            "cnn",
            "--in",
            "sim/series.csv",
            "--labels",
            "gt.csv",
            "--out",
            "grid.csv",
            "--seed",
            "3",
            "--epochs",
            "3",
            "--config",
            "tiny.toml",
        ],
    );
    let grid = std::fs::read_to_string(d.join("grid.csv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines[0], "detect,k1,k2,k3,k4");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));
    let cells = std::fs::read_to_string(d.join("grid.csv.cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 17);
}

#[test]
fn ingest_fills_gaps_on_the_minute_axis() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("op.csv"), "timestamp,value\n2024-03-01 10:00,40\n2024-03-01 10:03,43\nbad,1\n").unwrap();
    std::fs::write(d.join("pv.csv"), "timestamp,value\n2024-03-01 10:01,51\n2024-03-01 10:02,52\n").unwrap();
    ok(d, &["ingest", "--op", "op.csv", "--pv", "pv.csv", "--out", "series.csv"]);
    let text = std::fs::read_to_string(d.join("series.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "timestamp,op,pv,op_fill,pv_fill");
    assert_eq!(rows.len(), 5);
    let manifest: toml::Table = toml::from_str(&std::fs::read_to_string(d.join("series.csv.manifest.toml")).unwrap()).unwrap();
    assert_eq!(manifest["summary"]["op_skipped_rows"].as_integer(), Some(1));
    assert_eq!(manifest["summary"]["minutes"].as_integer(), Some(4));
}

#[test]
fn exit_codes_and_single_line_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = run(d, &["train", "--arch"]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error[Usage]"));

    assert_eq!(code(&run(d, &["--help"])), 0);
    assert_eq!(code(&run(d, &["frobnicate"])), 2);

    let out = run(d, &["evaluate", "--trace", "missing.csv", "--out", "r.txt"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[Io]"));

    std::fs::write(d.join("bad.toml"), "[loop]\nkp = 0.3\ncolour = 1\n").unwrap();
    assert_eq!(code(&run(d, &["simulate", "--config", "bad.toml", "--out", "sim"])), 2);
    assert!(!d.join("sim").exists());

    std::fs::write(d.join("garbage.sgw"), b"not a dataset").unwrap();
    let out = run(d, &["train", "--arch", "lstm", "--dataset", "garbage.sgw", "--out", "m.bin"]);
    assert_eq!(code(&out), 3);
    assert!(!d.join("m.bin").exists());
    assert!(!d.join("m.bin.history.csv").exists());

    let out = run(d, &["train", "--arch", "transformer", "--dataset", "garbage.sgw", "--out", "m.bin"]);
    assert_eq!(code(&out), 2);

    let mut names: Vec<String> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["bad.toml", "garbage.sgw"], "failed runs leave nothing behind");
}

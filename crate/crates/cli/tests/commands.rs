use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use contsurv::data::{load_csv, Schema};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_contsurv"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, kind: &str, n: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("{kind}_{n}_{seed}.csv"));
    let o = run(&[
        "simulate",
        "--kind",
        kind,
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn schema_of(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".schema.toml");
    PathBuf::from(s)
}

fn quick_config(dir: &Path) -> PathBuf {
    let path = dir.join("quick.toml");
    std::fs::write(
        &path,
        "max_epochs = 3\nm = 5\nbatch_size = 64\nhidden = [8, 8]\nembed_dim = 4\n",
    )
    .unwrap();
    path
}

#[test]
fn simulate_writes_readable_data_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "competing", 40, 3);
    let schema = Schema::load(&schema_of(&csv)).unwrap();
    let data = load_csv(&csv, &schema).unwrap();
    assert_eq!(data.len(), 40);
    assert_eq!(schema.features.len(), 20);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("competing_40_3.csv.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["duration_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn simulate_single_row_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let one = simulate(dir.path(), "nonlinear", 1, 0);
    assert_eq!(std::fs::read_to_string(&one).unwrap().lines().count(), 2);

    let a = simulate(dir.path(), "nonlinear", 50, 9);
    let bytes = std::fs::read(&a).unwrap();
    let b = simulate(dir.path(), "nonlinear", 50, 9);
    assert_eq!(bytes, std::fs::read(&b).unwrap());
}

#[test]
fn unwritable_output_is_an_input_error() {
    let o = run(&[
        "simulate",
        "--kind",
        "nonlinear",
        "--n",
        "5",
        "--out",
        "/nonexistent/dir/x.csv",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/dir/x.csv"));
}

#[test]
fn bad_flags_exit_with_one() {
    assert_eq!(
        run(&["simulate", "--kind", "bogus", "--n", "5", "--out", "x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn train_evaluate_predict_round() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "competing", 200, 1);
    let schema = schema_of(&csv);
    let cfg = quick_config(dir.path());
    let model = dir.path().join("model.json");

    let o = run(&[
        "train",
        "--data",
        p(&csv),
        "--schema",
        p(&schema),
        "--config",
        p(&cfg),
        "--m",
        "2",
        "--out",
        p(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(dir.path().join("model.json.log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,holdout_loss\n"));
    assert!(log.lines().count() >= 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("model.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["m"], 2);

    let report = dir.path().join("report.json");
    let o = run(&[
        "evaluate",
        "--model",
        p(&model),
        "--data",
        p(&csv),
        "--schema",
        p(&schema),
        "--out",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let entries = r["entries"].as_array().unwrap();
    // two risks, three horizons, IPCW and plain
    assert_eq!(entries.len(), 12);

    // evaluation is stateless
    let again = dir.path().join("report2.json");
    let copy = dir.path().join("copy.csv");
    std::fs::copy(&csv, &copy).unwrap();
    run(&[
        "evaluate",
        "--model",
        p(&model),
        "--data",
        p(&copy),
        "--schema",
        p(&schema),
        "--out",
        p(&again),
    ]);
    assert_eq!(std::fs::read(&report).unwrap(), std::fs::read(&again).unwrap());

    let row = vec!["0.1"; 20].join(",");
    let curve = dir.path().join("curve.csv");
    let o = run(&[
        "predict",
        "--model",
        p(&model),
        "--covariates",
        &row,
        "--mesh",
        "11:2.0",
        "--out",
        p(&curve),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&curve).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time,survival,cif_1,cif_2"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0][1], 1.0);
    for r in &rows {
        assert!((r[1] + r[2] + r[3] - 1.0).abs() < 1e-9);
    }
    for w in rows.windows(2) {
        assert!(w[1][1] <= w[0][1]);
    }

    let o = run(&[
        "predict",
        "--model",
        p(&model),
        "--covariates",
        "0.1,0.2",
        "--mesh",
        "0,1",
        "--out",
        p(&curve),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&[
        "predict",
        "--model",
        p(&model),
        "--covariates",
        &row,
        "--mesh",
        "0,2,1",
        "--out",
        p(&curve),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn evaluate_rejects_covariate_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let nl = simulate(dir.path(), "nonlinear", 120, 2);
    let cr = simulate(dir.path(), "competing", 120, 2);
    let cfg = quick_config(dir.path());
    let model = dir.path().join("m.json");
    let o = run(&[
        "train",
        "--data",
        p(&nl),
        "--schema",
        p(&schema_of(&nl)),
        "--config",
        p(&cfg),
        "--out",
        p(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&[
        "evaluate",
        "--model",
        p(&model),
        "--data",
        p(&cr),
        "--schema",
        p(&schema_of(&cr)),
        "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_schema_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "nonlinear", 10, 0);
    let missing = dir.path().join("nope.toml");
    let o = run(&[
        "train",
        "--data",
        p(&csv),
        "--schema",
        p(&missing),
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.toml"));
}

#[test]
fn config_problems_are_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "nonlinear", 10, 0);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "m = 1\nlearning_rate = -1.0\n").unwrap();
    let o = run(&[
        "train",
        "--data",
        p(&csv),
        "--schema",
        p(&schema_of(&csv)),
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("learning_rate") && err.contains('m'), "{err}");

    std::fs::write(&cfg, "epochs = 3\n").unwrap();
    let o = run(&[
        "train",
        "--data",
        p(&csv),
        "--schema",
        p(&schema_of(&csv)),
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn experiment_table_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "nonlinear", 150, 4);
    let cfg = quick_config(dir.path());
    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let o = run(&[
            "experiment",
            "--data",
            p(&csv),
            "--schema",
            p(&schema_of(&csv)),
            "--config",
            p(&cfg),
            "--m-list",
            "2,3",
            "--max-folds",
            "1",
            "--out",
            p(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read_to_string(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let lines: Vec<&str> = outputs[0].lines().collect();
    assert_eq!(lines[0], "scheme,m,risk,horizon_fraction,ctd_mean,ctd_se");
    // 2 schemes x 2 grid sizes x 3 horizons
    assert_eq!(lines.len(), 1 + 12);
    assert!(lines[1].starts_with("A,2,1,0.25,"));
    assert!(lines[7].starts_with("B,2,1,0.25,"));
}

#[test]
fn cv_writes_report_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "nonlinear", 150, 5);
    let cfg = quick_config(dir.path());
    let out = dir.path().join("cv.json");
    let o = run(&[
        "cv",
        "--data",
        p(&csv),
        "--schema",
        p(&schema_of(&csv)),
        "--config",
        p(&cfg),
        "--max-folds",
        "2",
        "--encoder",
        "pe",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["folds"].as_array().unwrap().len(), 2);
    assert_eq!(r["config"]["encoder"], "positional");
    let summary = std::fs::read_to_string(dir.path().join("cv.json.summary.csv")).unwrap();
    assert!(summary.starts_with("weighting,risk,horizon_fraction,"));
}

use std::path::Path;
use std::process::{Command, Output};

fn stfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stfm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 1×40 Lorenz-96 grid and a quick config next to it.
fn setup(dir: &Path, extra: &str) -> std::path::PathBuf {
    let gen = dir.join("gen");
    let out = stfm(&["generate", "--steps", "80", "--seed", "3", "--out", s(&gen)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "[data]\ngrid = \"gen/grid.txt\"\n\n[sampling]\ncenter_cell = [0, 20]\nwindow_cells = [0, 4]\nM = 30\nL = 15\n\n\
             [model]\nhidden = 8\ndropout = 0.0\n\n[train]\nmax_epochs = 20\nlr = 0.01\n{extra}"
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = stfm(&["generate", "--system", "lorenz96", "--k", "40", "--f", "8", "--steps", "500", "--seed", "7", "--out", s(out)]);
        assert!(r.status.success());
    }
    assert_eq!(read(a.join("grid.txt")), read(b.join("grid.txt")));
    assert_eq!(read(a.join("manifest.json")), read(b.join("manifest.json")));
    assert_eq!(read(a.join("grid.txt")).lines().count(), 10 + 500 * 40);
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    assert_eq!(stfm(&["generate", "--bogus"]).status.code(), Some(2));
    assert_eq!(stfm(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let r = stfm(&["train", "--config", "/nonexistent/run.toml", "--out", s(dir.path())]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("reading config"));
}

#[test]
fn bad_override_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let r = stfm(&["train", "--config", s(&cfg), "--set", "model.width=3", "--out", s(&dir.path().join("o"))]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("width"));
}

#[test]
fn selftest_passes() {
    let r = stfm(&["selftest"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stdout));
    assert!(!String::from_utf8_lossy(&r.stdout).contains("FAIL"));
}

#[test]
fn parallel_emits_one_row_per_forecast_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "\n[parallel]\nregion_cells = [1, 2]\nt_span = 2\nslide_stride = 3\n");
    let out = dir.path().join("par");
    let r = stfm(&["parallel", "--config", s(&cfg), "--threads", "2", "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = read(out.join("per_step.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,rmse,rmse_persistence,n_tasks");
    assert_eq!(lines.len(), 15);
    assert!(lines[1].ends_with(",4"));
}

#[test]
fn train_predict_and_manifest_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let run = dir.path().join("run1");
    let r = stfm(&["train", "--config", s(&cfg), "--set", "train.seed=5", "--out", s(&run)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["manifest.json", "checkpoint.bin", "train_report.jsonl", "point_report.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&read(run.join("manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["params"]["sampling"]["M"], 30);

    let replay = dir.path().join("run2");
    let r = stfm(&["train", "--manifest", s(&run.join("manifest.json")), "--out", s(&replay)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["manifest.json", "train_report.jsonl", "point_report.json"] {
        assert_eq!(read(run.join(f)), read(replay.join(f)), "{f}");
    }
    assert_eq!(std::fs::read(run.join("checkpoint.bin")).unwrap(), std::fs::read(replay.join("checkpoint.bin")).unwrap());

    let pred = dir.path().join("pred");
    let r = stfm(&["predict", "--checkpoint", s(&run.join("checkpoint.bin")), "--config", s(&cfg), "--out", s(&pred)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let forecast = read(pred.join("forecast.csv"));
    assert_eq!(forecast.lines().count(), 15);
    let report: serde_json::Value = serde_json::from_str(&read(run.join("point_report.json"))).unwrap();
    let first: f64 = forecast.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(report["model"]["predictions"][0].as_f64().unwrap(), first);

    let r = stfm(&["ablate", "--manifest", s(&run.join("manifest.json")), "--out", s(&dir.path().join("x"))]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn ablate_writes_eight_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "");
    let out = dir.path().join("abl");
    let r = stfm(&["ablate", "--config", s(&cfg), "--set", "sampling.L=8", "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = read(out.join("ablation.csv"));
    assert_eq!(csv.lines().count(), 9);
    assert!(csv.starts_with("variant,anti_diagonal_loss,self_attention,benchmark_value"));
}

#[test]
fn ingest_converts_long_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("extract.csv");
    std::fs::write(
        &input,
        "time,zlev,latitude,longitude,sst\nUTC,m,degrees_north,degrees_east,degree_C\n\
         2013-10-01T12:00:00Z,0.0,10.125,115.125,28.5\n2013-10-01T12:00:00Z,0.0,10.125,115.375,28.6\n\
         2013-10-02T12:00:00Z,0.0,10.125,115.125,28.4\n2013-10-02T12:00:00Z,0.0,10.125,115.375,28.7\n",
    )
    .unwrap();
    let out = dir.path().join("ing");
    let r = stfm(&["ingest", "--input", s(&input), "--format", "csv", "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let grid = read(out.join("grid.txt"));
    assert!(grid.contains("start=2013-10-01"));
    assert!(grid.contains("W=2"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dualgs");

/// The bundled config with a small grid and few validation samples.
fn small_config(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let base = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.toml")).unwrap();
    let text = base
        .replace("eps = [0.25, 0.5, 1.0, 2.0, 4.0]", "eps = [1.0]")
        .replace("t_e = [0.1, 0.3, 1.0, 3.0]", "t_e = [0.1, 0.3]")
        .replace("lambda_s = [0.01, 0.1, 1.0, 10.0, 100.0]", "lambda_s = [10.0, 100.0]")
        .replace("lambda_u = [0.01, 0.1, 1.0, 10.0, 100.0]", "lambda_u = [10.0, 100.0]")
        .replace("samples = 200", "samples = 10")
        .replace("coverage_trials = 500", "coverage_trials = 20");
    let path = dir.join("scenario.toml");
    fs::write(&path, edit(text)).unwrap();
    path
}

fn dualgs(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_run_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |t| t);
    let out = dir.path().join("out");
    let o = dualgs(&["full", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["k_new"]["cols"], 2, "{report}");
    assert_eq!(report["seed"], 20240601);
    for f in ["estimate.json", "design.json", "exploration.json", "validation.json", "timings.json", "solver_status.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn bad_delta_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |t| t.replace("delta = 0.1", "delta = 1.5"));
    let o = dualgs(&["estimate", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("algorithm.delta"));
}

#[test]
fn unknown_grid_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |t| t);
    let o = dualgs(&["design", "--config", s(&cfg), "--grid-override", "mu=1,2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn design_without_estimate_reports_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |t| t);
    let o = dualgs(&["design", "--config", s(&cfg), "--out", s(&dir.path().join("empty"))]);
    assert_eq!(o.status.code(), Some(6), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn staged_run_matches_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |t| t);
    let (full, staged) = (dir.path().join("full"), dir.path().join("staged"));
    let o = dualgs(&["full", "--config", s(&cfg), "--out", s(&full), "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for stage in ["estimate", "design", "explore", "validate"] {
        let o = dualgs(&["--stage", stage, "--config", s(&cfg), "--out", s(&staged), "--seed", "7", "--jobs", "1"]);
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let mut compared = 0;
    for entry in fs::read_dir(&full).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "timings.json" {
            continue;
        }
        assert_eq!(fs::read(full.join(&name)).unwrap(), fs::read(staged.join(&name)).unwrap(), "{name:?} differs");
        compared += 1;
    }
    assert!(compared >= 8);

    // A different seed in the validate stage must not silently reuse artifacts.
    let o = dualgs(&["validate", "--config", s(&cfg), "--out", s(&staged), "--seed", "8"]);
    assert_ne!(o.status.code(), Some(0));
}

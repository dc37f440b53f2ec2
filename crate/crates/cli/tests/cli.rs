//! Exit codes and artifacts of the `pnplab` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pnplab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnplab")).current_dir(dir).env_remove("PNPLAB_SEED").args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const EXACT_MMSE: &str = r#"{
  "prior": {"weights": [1.0], "means": [[0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]], "variances": [1.0]},
  "denoiser": {"kind": "exact_mmse"},
  "sigma": 0.1,
  "samples": 20000
}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn delta_opt_for_exact_mmse_is_near_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "mmse.json", EXACT_MMSE);
    let out = pnplab(dir.path(), &["delta-opt", "--config", &cfg, "--out", "o"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let grab = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line.split('=').nth(1).unwrap().trim().parse().unwrap()
    };
    let (d2, se) = (grab("delta_opt_sq"), grab("stderr"));
    assert!((d2 - 1.0).abs() <= 4.0 * se);
    assert!(text.contains("sandwich: pass"));
    let csv = fs::read_to_string(dir.path().join("o/delta-opt.csv")).unwrap();
    assert!(csv.starts_with("experiment,key,metric,value,runtime_ms,seed\n"));
    assert!(dir.path().join("o/delta-opt.manifest.json").exists());
}

#[test]
fn identity_denoiser_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "id.json",
        r#"{"prior": {"weights": [1.0], "means": [[0, 0]], "variances": [1.0]},
            "denoiser": {"kind": "shrinkage", "alpha": 1.0}, "sigma": 0.1, "samples": 100}"#,
    );
    let out = pnplab(dir.path(), &["delta-opt", "--config", &cfg, "--out", "o"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("degenerate denoiser"));
}

#[test]
fn missing_sigma_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{"prior": {"weights": [1.0], "means": [[0]], "variances": [1.0]}, "denoiser": {"kind": "exact_mmse"}}"#,
    );
    let out = pnplab(dir.path(), &["delta-opt", "--config", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("missing field `sigma`"), "{}", stderr(&out));
}

#[test]
fn malformed_json_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "broken.json", "{\n  \"sigma\": 0.1,\n  oops\n}");
    let out = pnplab(dir.path(), &["delta-opt", "--config", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 3 column"), "{}", stderr(&out));
}

#[test]
fn unknown_experiment_lists_the_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = pnplab(dir.path(), &["run", "sweep"]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    for name in ["delta-sweep", "stability", "conv-reg", "lipschitz"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&pnplab(dir.path(), &["--workers", "many", "selftest"])), 1);
    assert_eq!(code(&pnplab(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&pnplab(dir.path(), &["--help"])), 0);
}

#[test]
fn unwritable_output_dir_fails_before_computing() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = write(dir.path(), "file", "not a directory");
    let out = pnplab(dir.path(), &["run", "lipschitz", "--out", &format!("{blocker}/sub")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("not writable"));
}

#[test]
fn run_writes_csv_svg_and_a_replayable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cr.json", r#"{"dim": 16, "delta_grid": [1, 10, 100, 1000]}"#);
    let out = pnplab(dir.path(), &["run", "conv-reg", &cfg, "--out", "a", "--seed", "4", "--workers", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read(dir.path().join("a/conv-reg.csv")).unwrap();
    assert!(dir.path().join("a/conv-reg_data_consistency.svg").exists());
    let manifest_path = dir.path().join("a/conv-reg.manifest.json");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["command"], "run conv-reg");
    for key in ["resolved_spec", "tool_version", "started_at", "finished_at", "config_path"] {
        assert!(!manifest[key].is_null(), "{key}");
    }

    let replay = pnplab(
        dir.path(),
        &["run", "conv-reg", "--config", manifest_path.to_str().unwrap(), "--out", "b", "--workers", "3"],
    );
    assert_eq!(code(&replay), 0, "{}", stderr(&replay));
    assert_eq!(csv, fs::read(dir.path().join("b/conv-reg.csv")).unwrap());
}

#[test]
fn seed_precedence_is_flag_then_config_then_environment() {
    let dir = tempfile::tempdir().unwrap();
    let with_seed = write(dir.path(), "s.json", r#"{"points": 20, "seed": 7}"#);
    let without = write(dir.path(), "n.json", r#"{"points": 20}"#);
    let seed_of = |args: &[&str], env: Option<&str>| -> String {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_pnplab"));
        cmd.current_dir(dir.path()).env_remove("PNPLAB_SEED").args(args).args(["--out", "o"]);
        if let Some(v) = env {
            cmd.env("PNPLAB_SEED", v);
        }
        let out = cmd.output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let csv = fs::read_to_string(dir.path().join("o/lipschitz.csv")).unwrap();
        csv.lines().nth(1).unwrap().rsplit(',').next().unwrap().to_string()
    };
    assert_eq!(seed_of(&["run", "lipschitz", &with_seed, "--seed", "3"], Some("11")), "3");
    assert_eq!(seed_of(&["run", "lipschitz", &with_seed], Some("11")), "7");
    assert_eq!(seed_of(&["run", "lipschitz", &without], Some("11")), "11");
    assert_eq!(seed_of(&["run", "lipschitz", &without], None), "0");
}

#[test]
fn conflicting_experiment_name_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"name": "stability"}"#);
    assert_eq!(code(&pnplab(dir.path(), &["run", "conv-reg", &cfg])), 1);
}

#[test]
fn selftest_passes_and_detects_a_biased_score() {
    let dir = tempfile::tempdir().unwrap();
    let out = pnplab(dir.path(), &["selftest"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("pass ")).count(), 4, "{text}");

    let out = pnplab(dir.path(), &["selftest", "--inject-score-bias", "1e-3"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("tweedie-consistency"));
    assert!(stdout(&out).contains("FAIL tweedie-consistency"));
}

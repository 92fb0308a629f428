use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use trf_aad::cli::sidecar_path;
use trf_aad::io::{MatrixFile, RunConfig};

fn aad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aad"))
        .args(args)
        .env("AAD_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path_arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn synth(dir: &Path, seed: u64) -> PathBuf {
    let out = aad(&["synth", "--seed", &seed.to_string(), "--out-dir", path_arg(dir)]);
    assert!(out.status.success(), "synth failed: {}", String::from_utf8_lossy(&out.stderr));
    dir.join("scene.aadm")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn synth_writes_thirty_minutes_of_four_channels() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), 3);
    let m = MatrixFile::load(&scene).unwrap();
    assert_eq!(m.rows(), 115_200);
    assert_eq!(m.rate_hz(), 64.0);
    assert_eq!(m.channels(), ["env_1", "env_2", "eeg", "noise_ref"]);
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&scene)).unwrap()).unwrap();
    assert_eq!(truth["seed"], 3);
    assert_eq!(truth["snr_db"], -12.0);
}

#[test]
fn synth_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = synth(a.path(), 9);
    let sb = synth(b.path(), 9);
    assert_eq!(std::fs::read(&sa).unwrap(), std::fs::read(&sb).unwrap());
    assert_eq!(
        std::fs::read(sidecar_path(&sa)).unwrap(),
        std::fs::read(sidecar_path(&sb)).unwrap()
    );
}

#[test]
fn out_of_range_snr_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = aad(&["synth", "--snr-db", "-30", "--out-dir", path_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("snr_db"), "{}", stderr(&out));
    assert!(!dir.path().join("scene.aadm").exists());
}

fn rewrite(scene: &Path, keep: impl Fn(&str) -> bool, rows: Option<usize>) {
    let m = MatrixFile::load(scene).unwrap();
    let n = rows.unwrap_or(m.rows());
    let cols = m
        .channels()
        .iter()
        .filter(|c| keep(c))
        .map(|c| (c.clone(), m.column(c).unwrap()[..n].to_vec()))
        .collect();
    MatrixFile::from_columns(m.rate_hz(), cols).unwrap().save(scene).unwrap();
}

#[test]
fn missing_noise_channel_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), 4);
    rewrite(&scene, |c| c != "noise_ref", None);
    let out = aad(&["decode", path_arg(&scene), "--out-dir", path_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("noise_ref"), "{}", stderr(&out));
}

#[test]
fn rows_disagreeing_with_sidecar_are_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), 5);
    rewrite(&scene, |_| true, Some(115_000));
    let out = aad(&["decode", path_arg(&scene), "--out-dir", path_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("sidecar"), "{}", stderr(&out));
}

#[test]
fn decode_routes_the_estimator_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), 6);
    let out_dir = dir.path().join("ls2");
    let out = aad(&[
        "decode",
        path_arg(&scene),
        "--estimator",
        "ls_2sec",
        "--out-dir",
        path_arg(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ls_2sec accuracy"));
    let res: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("result.json")).unwrap()).unwrap();
    assert_eq!(res["estimator"], "ls_2sec");
    assert!(res["ridge"].as_f64().is_some_and(|r| r > 0.0));
    assert_eq!(res["n_test_trials"], 298);
    for f in ["trials.csv", "markers.svg", "probability.svg", "scatter.svg"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let trials = std::fs::read_to_string(out_dir.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 299);

    let bad = aad(&["decode", path_arg(&scene), "--estimator", "kalman"]);
    assert_ne!(bad.status.code(), Some(0));
}

fn write_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&RunConfig::default().to_json()).unwrap();
    edit(&mut v);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

#[test]
fn validate_accepts_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |_| {});
    let out = aad(&["validate", "--config", path_arg(&cfg)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

#[test]
fn validate_names_the_offending_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |v| {
        v["protocol"]["windows"]["n1_lo"] = 0.40.into();
        v["protocol"]["windows"]["n1_hi"] = 0.45.into();
        v["protocol"]["windows"]["p2_lo"] = 0.5.into();
        v["protocol"]["windows"]["p2_hi"] = 0.6.into();
    });
    let out = aad(&["validate", "--config", path_arg(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("n1 window"), "{}", stderr(&out));

    let cfg = write_config(dir.path(), |v| v["protocol"]["preprocess"]["trial_sec"] = (-2.0).into());
    let out = aad(&["validate", "--config", path_arg(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("trial_sec"), "{}", stderr(&out));

    let cfg = write_config(dir.path(), |v| v["protocol"]["typo"] = 1.into());
    let out = aad(&["validate", "--config", path_arg(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("typo"), "{}", stderr(&out));
}

#[test]
fn compare_writes_one_row_per_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(&dir.path().join("a"), 1);
    let b = synth(&dir.path().join("b"), 2);
    let out_dir = dir.path().join("cmp");
    let out = aad(&["--quiet", "compare", path_arg(&a), path_arg(&b), "--out-dir", path_arg(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    assert!(out.stderr.is_empty());

    let csv = std::fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("estimator,n_scenes,mean_accuracy,mean_trf_lag_std,n_above_chance")
    );
    let mut names: Vec<&str> = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 5, "{line}");
        names.push(f[0]);
        assert_eq!(f[1], "2");
        let acc: f64 = f[2].parse().unwrap();
        assert!((0.0..=100.0).contains(&acc));
        assert!(f[3].parse::<f64>().unwrap() > 0.0);
        assert!(f[4].parse::<usize>().unwrap() <= 2);
    }
    names.sort_unstable();
    assert_eq!(names, ["ls_2sec", "ls_60sec_overlap", "seq_lmmse"]);
    let runs = std::fs::read_to_string(out_dir.join("compare_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 6);
}

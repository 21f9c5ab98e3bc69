//! End-to-end runs of the binary on small configs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use tempdyn_core::datasets::{gaussian_blobs, save_csv};

fn model(k: usize) -> Value {
    json!({"input_dim": 4, "hidden_widths": [16], "num_classes": k, "activation": "relu", "weight_scale": 1.0})
}

fn blobs(k: usize) -> Value {
    json!({"generator": "gaussian_blobs", "num_classes": k, "train_size": 8, "test_size": 4,
           "input_dim": 4, "separation": 2.0, "seed": 1})
}

fn write_config(dir: &Path, config: &Value) -> PathBuf {
    let path = dir.join("config.in.json");
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tempdyn"))
        .arg(command)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn ok(command: &str, config: &Value, extra: &[&str]) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), config);
    let out = dir.path().join("out");
    let o = run(command, &cfg, &out, extra);
    assert!(o.status.success(), "{command}: {}", String::from_utf8_lossy(&o.stderr));
    (dir, out)
}

fn fails(command: &str, config: &Value, extra: &[&str]) -> String {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), config);
    let o = run(command, &cfg, &dir.path().join("out"), extra);
    assert!(!o.status.success());
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn table(path: PathBuf) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

fn spectra() -> Value {
    json!({"num_classes": 4, "seed": 2, "betas": [1, 4]})
}

#[test]
fn resolved_config_has_version_hash_and_defaults() {
    let (_d, out) = ok("spectra", &spectra(), &[]);
    let v = read_json(out.join("config.json"));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["command"], "spectra");
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(v["config"]["seed"], 2);

    let config = json!({"model": model(2), "dataset": blobs(2), "betas": [1], "eta_tilde": 0.1, "steps": 4});
    let (_d, out) = ok("collapse", &config, &[]);
    let v = read_json(out.join("config.json"));
    assert_eq!(v["config"]["correlation"], -1.0);
    assert_eq!(v["config"]["integrator"], "discrete_steps");
    assert_eq!(v["config"]["model"]["bias_scale"], 0.0);
    assert!(out.join("dataset.json").exists());
}

#[test]
fn bad_invocations_fail_with_a_reason() {
    let mut c = spectra();
    c["beta"] = json!(1);
    assert!(fails("spectra", &c, &[]).contains("beta"));
    assert!(fails("spectra", &spectra(), &["--jobs", "0"]).contains("--jobs"));
    let mut c = spectra();
    c["betas"] = json!([-1]);
    assert!(fails("spectra", &c, &[]).contains("betas"));

    let dir = tempfile::tempdir().unwrap();
    let o = run("spectra", &dir.path().join("missing.json"), &dir.path().join("out"), &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));

    let config = json!({"model": model(2), "dataset": blobs(2), "beta": 1, "gamma_tilde": 4,
                        "alphas": [0.01, 0.25], "steps": 4});
    assert!(fails("momentum", &config, &[]).contains("gamma_tilde^-2"));
    let mismatch = json!({"model": model(3), "dataset": blobs(2), "kernel": "analytic"});
    assert!(fails("ntk-dump", &mismatch, &[]).contains("num_classes"));
}

#[test]
fn seed_override_changes_the_hash() {
    let (_a, plain) = ok("spectra", &spectra(), &[]);
    let (_b, seeded) = ok("spectra", &spectra(), &["--seed-override", "9"]);
    let a = read_json(plain.join("config.json"));
    let b = read_json(seeded.join("config.json"));
    assert_eq!(b["config"]["seed"], 9);
    assert_ne!(a["config_hash"], b["config_hash"]);
    assert_ne!(read_json(plain.join("logits.json")), read_json(seeded.join("logits.json")));
}

#[test]
fn ntk_dump_sidecar_matches_the_files() {
    let config = json!({"model": model(2), "dataset": blobs(2), "split": "test_train", "format": "bin"});
    let (_d, out) = ok("ntk-dump", &config, &[]);
    let side = read_json(out.join("ntk.json"));
    assert_eq!((side["m1"].as_u64(), side["m2"].as_u64(), side["k"].as_u64()), (Some(4), Some(8), Some(2)));
    let bytes = std::fs::metadata(out.join("ntk.bin")).unwrap().len();
    assert_eq!(bytes, 8 * side["rows"].as_u64().unwrap() * side["cols"].as_u64().unwrap());

    let config = json!({"model": model(2), "dataset": blobs(2), "kernel": "analytic"});
    let (_d, out) = ok("ntk-dump", &config, &[]);
    let side = read_json(out.join("ntk.json"));
    let text = std::fs::read_to_string(out.join("ntk.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len() as u64, side["rows"].as_u64().unwrap());
    assert!(rows.iter().all(|r| r.split(',').count() == 16));
}

#[test]
fn csv_datasets_load_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = gaussian_blobs::<f64>(2, 8, 4, 4, 2.0, 3).unwrap();
    save_csv(&data.train, dir.path().join("train.csv")).unwrap();
    save_csv(&data.test, dir.path().join("test.csv")).unwrap();
    let config = json!({"model": model(2), "dataset": {"generator": "csv", "train_path": "train.csv", "test_path": "test.csv"},
                        "split": "test_train"});
    let cfg = write_config(dir.path(), &config);
    let out = dir.path().join("out");
    let cwd = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tempdyn"))
        .current_dir(cwd.path())
        .args(["ntk-dump", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let record = read_json(out.join("dataset.json"));
    assert_eq!((record["train_size"].as_u64(), record["test_size"].as_u64()), (Some(8), Some(4)));
}

#[test]
fn unreachable_timescale_targets_are_nan() {
    let config = json!({"model": model(2), "dataset": blobs(2), "betas": [0.5, 1], "z0_norms": [0.01, 1e6],
                        "eta_tilde": 0.01, "seeds": [0]});
    let (_d, out) = ok("timescales", &config, &[]);
    let (header, rows) = table(out.join("timescales.csv"));
    assert_eq!(&header[..7], ["beta", "z0_norm", "eta_tilde", "tau_z", "tau_nl", "tau_z_raw", "tau_nl_raw"]);
    assert_eq!(rows.len(), 4);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for row in &rows {
        let far = row[col("target_z0_norm")].parse::<f64>().unwrap() > 1.0;
        assert_eq!(row[col("reachable")], (!far).to_string());
        assert_eq!(row[col("tau_z")] == "NaN", far);
    }
}

#[test]
fn phase_plane_covers_the_grid() {
    let config = json!({"model": model(2), "dataset": blobs(2), "betas": [0.5, 2], "correlations": [-1, 0, 1],
                        "seeds": [0, 1], "rate": {"alpha": 0.05}, "steps": 6, "early_step": 3});
    let (_d, out) = ok("phase-plane", &config, &[]);
    let (header, rows) = table(out.join("phase_plane.csv"));
    assert_eq!(header.len(), tempdyn_cli::commands::phase_plane::HEADER.len());
    assert_eq!(rows.len(), 2 * 3 * 2);
}

#[test]
fn divergent_sweep_still_succeeds() {
    let config = json!({"model": model(2), "dataset": blobs(2), "betas": [1, 2], "alphas": [0.01, 1e4],
                        "seeds": [0], "steps": 20});
    let (_d, out) = ok("lr-sweep", &config, &[]);
    let (header, rows) = table(out.join("lr_sweep.csv"));
    assert_eq!(header, tempdyn_cli::commands::lr_sweep::HEADER);
    let diverged = header.iter().position(|h| h == "diverged").unwrap();
    assert!(rows.iter().any(|r| r[diverged] == "true"));
    let (_, stars) = table(out.join("alpha_star.csv"));
    assert_eq!(stars.len(), 2);
    assert!(stars.iter().all(|r| r[1] == "0.01"));
}

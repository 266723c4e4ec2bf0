use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const FILES: [&str; 6] = ["left.evt", "right.evt", "imu.csv", "gt.tum", "noise_mask.csv", "meta.json"];

fn evio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evio")).args(args).output().expect("binary runs")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn generate(dir: &Path, seed: u64, duration: f64) -> Output {
    evio(&[
        "generate",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--set",
        &format!("trajectory.duration={duration}"),
    ])
}

fn dataset(tmp: &TempDir, name: &str, duration: f64) -> PathBuf {
    let dir = tmp.path().join(name);
    let out = generate(&dir, 7, duration);
    assert!(out.status.success(), "{}", text(&out));
    dir
}

fn run(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let input = format!("input_dir={}", data.display());
    let mut args = vec!["run", "--out", out.to_str().unwrap(), "--set", &input];
    args.extend_from_slice(extra);
    evio(&args)
}

#[test]
fn generate_writes_six_files_and_reuses_seed() {
    let tmp = TempDir::new().unwrap();
    let a = dataset(&tmp, "a", 0.5);
    let b = dataset(&tmp, "b", 0.5);
    for f in FILES {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty(), "{f} is empty");
        assert!(x == y, "{f} differs between runs with the same seed");
    }
}

#[test]
fn generate_rejects_zero_duration() {
    let tmp = TempDir::new().unwrap();
    let out = generate(&tmp.path().join("d"), 1, 0.0);
    assert!(!out.status.success());
    assert!(text(&out).contains("duration"), "{}", text(&out));
}

#[test]
fn missing_imu_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(&tmp, "d", 0.3);
    let imu = data.join("imu.csv");
    fs::remove_file(&imu).unwrap();
    let out = run(&data, &tmp.path().join("out"), &[]);
    assert!(!out.status.success());
    assert!(text(&out).contains(imu.to_str().unwrap()), "{}", text(&out));
}

#[test]
fn runs_are_deterministic_and_write_artifacts() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(&tmp, "d", 1.0);
    let (o1, o2) = (tmp.path().join("o1"), tmp.path().join("o2"));
    for o in [&o1, &o2] {
        let out = run(&data, o, &["--seed", "3"]);
        assert!(out.status.success(), "{}", text(&out));
    }
    let est = fs::read(o1.join("est.tum")).unwrap();
    assert!(!est.is_empty());
    assert_eq!(est, fs::read(o2.join("est.tum")).unwrap());
    for f in ["map_final.txt", "timing.txt", "metrics.json"] {
        assert!(o1.join(f).is_file(), "{f} missing");
    }
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(o1.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["ate_rmse_m"].as_f64().unwrap() < 0.05, "{metrics}");
    assert!(metrics["n_pairs"].as_u64().unwrap() > 20);
    for k in ["a", "b", "c", "d", "total_ms"] {
        assert!(metrics["timing"][k].as_f64().is_some(), "timing.{k} missing: {metrics}");
    }
}

#[test]
fn divergence_exits_with_flag() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(&tmp, "d", 0.3);
    let out = run(&data, &tmp.path().join("out"), &["--set", "max_position_sigma=1e-6"]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out));
    assert!(text(&out).contains("DIVERGED"), "{}", text(&out));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(&tmp, "d", 0.3);
    let out = run(&data, &tmp.path().join("out"), &["--set", "voxel_sise=0.5"]);
    assert!(!out.status.success());
    assert!(text(&out).contains("voxel_sise"), "{}", text(&out));
}

#[test]
fn config_file_is_read() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "eta = -1.0\n").unwrap();
    let out = evio(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(text(&out).contains("eta"), "{}", text(&out));
}

#[test]
fn ablate_rejects_unknown_switch() {
    let out = evio(&["ablate", "no_voxels"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("no_voxels"), "{}", text(&out));
}

#[test]
fn ablate_runs_both_variants_on_noise_free_input() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("ablate");
    let out = evio(&[
        "ablate",
        "no_management",
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "2",
        "--sim-set",
        "trajectory.duration=1.0",
    ]);
    assert!(out.status.success(), "{}", text(&out));
    for v in ["full", "no_management"] {
        assert!(out_dir.join(v).join("metrics.json").is_file(), "{v} metrics missing");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(summary["switch"], "no_management");
}

#[test]
fn eval_of_identical_trajectories_is_zero() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(&tmp, "d", 0.5);
    let gt = data.join("gt.tum");
    let out_dir = tmp.path().join("eval");
    let out = evio(&[
        "eval",
        gt.to_str().unwrap(),
        gt.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["ate_rmse_m"].as_f64().unwrap() < 1e-9);
}

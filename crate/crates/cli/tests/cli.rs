use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn munit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_munit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn munit")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_dataset(dir: &Path) {
    let cfg = dir.join("data.cfg");
    std::fs::write(&cfg, "n_train=6\nn_test=4\nimage_size=16\n").unwrap();
    json(&munit(&["gen-data", "--config", s(&cfg), "--out", s(&dir.join("data"))]));
}

fn tiny_checkpoint(dir: &Path) -> std::path::PathBuf {
    tiny_dataset(dir);
    let cfg = dir.join("train.cfg");
    std::fs::write(
        &cfg,
        "image_size=16\nbase_channels=4\nn_res=1\nstyle_dim=2\nmlp_dim=8\nd_layers=2\ntotal_steps=3\n",
    )
    .unwrap();
    let out = dir.join("run");
    let v = json(&munit(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&dir.join("data")),
        "--out",
        s(&out),
    ]));
    assert_eq!(v["steps"], 3);
    out.join("ckpt_final")
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(munit(&[]).status.code(), Some(2));
    assert_eq!(munit(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(munit(&["translate", "--ckpt", "x"]).status.code(), Some(2));
    assert_eq!(munit(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_1_and_one_line() {
    let out = munit(&["translate", "--ckpt", "/nonexistent/ckpt", "--input", "a.png", "--domain", "1", "--out", "/tmp/x.png"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().find(|l| l.starts_with("error:")).expect("error line");
    assert!(line.len() > "error: ".len());
    let bad_domain = munit(&["sample", "--ckpt", "x", "--input", "a.png", "--domain", "3", "--out", "/tmp"]);
    assert_eq!(bad_domain.status.code(), Some(1));
}

#[test]
fn gen_data_refuses_to_overwrite_without_force() {
    let dir = TempDir::new().unwrap();
    tiny_dataset(dir.path());
    let data = dir.path().join("data");
    assert!(data.join("dataset.json").exists());
    assert_eq!(std::fs::read_dir(data.join("domain1")).unwrap().count(), 7);
    let again = munit(&["gen-data", "--out", s(&data)]);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let cfg = dir.path().join("data.cfg");
    json(&munit(&["gen-data", "--config", s(&cfg), "--out", s(&data), "--force"]));
}

#[test]
fn bad_config_key_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "n_trian=3\n").unwrap();
    let out = munit(&["gen-data", "--config", s(&cfg), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_trian"));
}

#[test]
fn train_translate_sample_round() {
    let dir = TempDir::new().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let input = dir.path().join("data/test/domain1/00000.png");
    assert!(input.exists());

    let translate = |out: &Path, extra: &[&str]| {
        let mut args = vec!["translate", "--ckpt", s(&ckpt), "--input", s(&input), "--domain", "1", "--out", s(out)];
        args.extend_from_slice(extra);
        munit(&args)
    };
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    let va = json(&translate(&a, &["--seed", "5"]));
    let vb = json(&translate(&b, &["--seed", "5"]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(va["styles"], vb["styles"]);

    assert_eq!(translate(&a, &["--seed", "5"]).status.code(), Some(1));
    json(&translate(&a, &["--seed", "6", "--force"]));

    let multi = dir.path().join("m.png");
    let vm = json(&translate(&multi, &["--n", "3"]));
    assert_eq!(vm["outputs"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("m_2.png").exists());

    let reference = dir.path().join("data/test/domain2/00001.png");
    let guided = dir.path().join("g.png");
    json(&translate(&guided, &["--style-from", s(&reference)]));
    assert_eq!(translate(&guided, &["--style-from", s(&reference), "--n", "2", "--force"]).status.code(), Some(1));

    let samples = dir.path().join("samples");
    let vs = json(&munit(&[
        "sample", "--ckpt", s(&ckpt), "--input", s(&input), "--domain", "1", "--n", "4", "--out", s(&samples),
    ]));
    assert_eq!(vs["styles"].as_array().unwrap().len(), 4);
    assert!(samples.join("sample_003.png").exists());
}

#[test]
fn resume_rejects_config_override() {
    let dir = TempDir::new().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let out = munit(&[
        "train",
        "--ckpt",
        s(&ckpt),
        "--seed",
        "3",
        "--data",
        s(&dir.path().join("data")),
        "--out",
        s(&dir.path().join("resumed")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn grad_check_reports_every_kernel() {
    let v = json(&munit(&["grad-check", "--n", "1"]));
    let kernels = v["kernels"].as_array().unwrap();
    assert!(kernels.len() >= 8);
    assert!(kernels.iter().all(|k| k["pass"] == true));
}

#[test]
fn oracle_probe_needs_no_checkpoint() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("probe.cfg");
    std::fs::write(&cfg, "oracle_images=20\n").unwrap();
    let out = dir.path().join("probe");
    let v = json(&munit(&["probe", "--which", "oracle_minimum", "--config", s(&cfg), "--out", s(&out)]));
    assert!(v.to_string().contains("\"status\":\"pass\""));
    assert!(out.join("probe_oracle_minimum.json").exists());
}

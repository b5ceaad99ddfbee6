use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use denoisenet::data::{add_gaussian_noise, load_gray, save_gray, synthetic, GrayImage};
use denoisenet::eval::psnr;
use denoisenet::model::{DenoiseNet, ModelConfig};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_denoisenet"));
    cmd.env_remove("DENOISENET_THREADS");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    eprintln!("stdout:\n{}\nstderr:\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    out
}

fn small_model(dir: &Path) -> PathBuf {
    let path = dir.join("small.dnet");
    DenoiseNet::init(ModelConfig::new(3, 4).unwrap(), 11).unwrap().save(&path).unwrap();
    path
}

fn noisy_image(dir: &Path, name: &str, seed: u64) -> (PathBuf, PathBuf) {
    let clean = synthetic::shapes(24, seed);
    let noisy = add_gaussian_noise(&clean.to_tensor(), 25.0, seed).unwrap();
    let (cp, np) = (dir.join(format!("clean_{name}")), dir.join(format!("noisy_{name}")));
    save_gray(&cp, &clean).unwrap();
    save_gray(&np, &GrayImage::from_tensor(&noisy).unwrap()).unwrap();
    (cp, np)
}

fn training_set(dir: &Path) -> PathBuf {
    let mut manifest = String::new();
    for i in 0..3 {
        let name = format!("train{i}.png");
        save_gray(&dir.join(&name), &synthetic::shapes(24, 100 + i)).unwrap();
        manifest.push_str(&format!("{name}\tshapes\n"));
    }
    let path = dir.join("train.txt");
    std::fs::write(&path, manifest).unwrap();
    path
}

fn train_args(cmd: &mut Command, manifest: &Path, out: &Path) {
    train_args_with_patch(cmd, manifest, out, 12);
}

fn train_args_with_patch(cmd: &mut Command, manifest: &Path, out: &Path, patch: usize) {
    cmd.args(["train", "--depth", "3", "--feature_channels", "4", "--batch_size", "2"])
        .arg("--patch_size")
        .arg(patch.to_string())
        .args(["--crop_border", "3", "--steps", "6", "--seed", "5", "--checkpoint_every", "3"])
        .arg("--train_manifest")
        .arg(manifest)
        .arg("--out_dir")
        .arg(out);
}

#[test]
fn denoise_writes_the_output_image() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let (_, noisy) = noisy_image(dir.path(), "a.png", 1);
    let output = dir.path().join("out/denoised.png");
    let out = run(bin().arg("denoise").arg("--model").arg(&model).arg("--input").arg(&noisy).arg("--output").arg(&output));
    assert_eq!(out.status.code(), Some(0));
    let written = load_gray(&output).unwrap();
    let expected = DenoiseNet::load(&model).unwrap().denoise_image(&load_gray(&noisy).unwrap().to_tensor()).unwrap();
    assert_eq!(written.to_levels(), GrayImage::from_tensor(&expected).unwrap().to_levels());
    assert!(dir.path().join("out/run.log").is_file());
}

#[test]
fn missing_model_is_a_validation_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (_, noisy) = noisy_image(dir.path(), "a.png", 1);
    let missing = dir.path().join("nope.dnet");
    let out = run(bin().arg("denoise").arg("--model").arg(&missing).arg("--input").arg(&noisy).arg("--output").arg(dir.path().join("o.png")));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&missing.display().to_string()));
    assert!(!dir.path().join("o.png").exists());
}

#[test]
fn corrupt_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, noisy) = noisy_image(dir.path(), "a.png", 1);
    let bad = dir.path().join("bad.dnet");
    std::fs::write(&bad, b"DNET garbage").unwrap();
    let out = run(bin().arg("denoise").arg("--model").arg(&bad).arg("--input").arg(&noisy).arg("--output").arg(dir.path().join("o.png")));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot load model"));
}

#[test]
fn eval_means_match_direct_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let (clean_dir, a_dir, b_dir) = (dir.path().join("clean"), dir.path().join("a"), dir.path().join("b"));
    for d in [&clean_dir, &a_dir, &b_dir] {
        std::fs::create_dir_all(d).unwrap();
    }
    let mut direct = [Vec::new(), Vec::new()];
    for i in 0..4u64 {
        let name = format!("img{i}.png");
        let clean = synthetic::disks(20, i);
        save_gray(&clean_dir.join(&name), &clean).unwrap();
        for (k, (d, sigma)) in [(&a_dir, 10.0), (&b_dir, 30.0)].into_iter().enumerate() {
            let noisy = GrayImage::from_tensor(&add_gaussian_noise(&clean.to_tensor(), sigma, i).unwrap()).unwrap();
            save_gray(&d.join(&name), &noisy).unwrap();
            let truth = load_gray(&clean_dir.join(&name)).unwrap().to_tensor();
            direct[k].push(psnr(&load_gray(&d.join(&name)).unwrap().to_tensor(), &truth).unwrap());
        }
    }
    let out_dir = dir.path().join("run");
    let out = run(bin()
        .arg("eval")
        .arg("--clean_dir")
        .arg(&clean_dir)
        .arg("--denoised_dirs")
        .arg(format!("low={}", a_dir.display()))
        .arg("--denoised_dirs")
        .arg(&b_dir)
        .arg("--out_dir")
        .arg(&out_dir));
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for (name, scores) in [("low", &direct[0]), ("b", &direct[1])] {
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let line = stdout.lines().find(|l| l.starts_with(&format!("{name}: mean psnr"))).unwrap();
        let reported: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
        assert!((reported - mean).abs() <= 5e-4, "{name}: {reported} vs {mean}");
    }
    let records = std::fs::read_to_string(out_dir.join("reports/records.csv")).unwrap();
    let rows: Vec<&str> = records.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        let i: usize = f[0][3..4].parse().unwrap();
        let k = if f[2] == "low" { 0 } else { 1 };
        let v: f64 = f[3].parse().unwrap();
        assert!((v - direct[k][i]).abs() <= 1e-9 * v.abs(), "{row}");
    }
}

#[test]
fn eval_rejects_a_missing_denoised_file_before_writing_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (clean_dir, a_dir) = (dir.path().join("clean"), dir.path().join("a"));
    std::fs::create_dir_all(&clean_dir).unwrap();
    std::fs::create_dir_all(&a_dir).unwrap();
    save_gray(&clean_dir.join("x.png"), &synthetic::disks(16, 1)).unwrap();
    let out_dir = dir.path().join("run");
    let out = run(bin().arg("eval").arg("--clean_dir").arg(&clean_dir).arg("--denoised_dirs").arg(&a_dir).arg("--out_dir").arg(&out_dir));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("has no image"));
    assert!(!out_dir.exists());
}

#[test]
fn patch_not_larger_than_twice_the_crop_is_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = training_set(dir.path());
    let out_dir = dir.path().join("run");
    let mut cmd = bin();
    train_args_with_patch(&mut cmd, &manifest, &out_dir, 6);
    let out = run(&mut cmd);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("crop"), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.exists());
}

#[test]
fn missing_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = training_set(dir.path());
    let out = run(bin().arg("train").arg("--train_manifest").arg(&manifest).arg("--out_dir").arg(dir.path().join("run")));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn training_is_reproducible_and_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = training_set(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut first = bin();
    train_args(first.arg("--threads").arg("1"), &manifest, &a);
    assert_eq!(run(&mut first).status.code(), Some(0));
    let mut second = bin();
    train_args(&mut second, &manifest, &b);
    assert_eq!(run(second.env("DENOISENET_THREADS", "1")).status.code(), Some(0));
    for f in ["model/model.dnet", "model/checkpoint_3.dnet", "model/checkpoint_6.dnet", "reports/loss.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let loss = std::fs::read_to_string(a.join("reports/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 7);
    assert!(loss.starts_with("step,loss\n1,"));
    let log = std::fs::read_to_string(a.join("run.log")).unwrap();
    assert!(log.contains("model.dnet"), "{log}");
    let config: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("reports/config.json")).unwrap()).unwrap();
    assert_eq!(config["seed"], 5);
    assert_eq!(config["patch_size"], 12);
    let model = DenoiseNet::load(&a.join("model/model.dnet")).unwrap();
    assert_eq!(model.config(), ModelConfig::new(3, 4).unwrap());
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = training_set(dir.path());
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"depth": 3, "feature_channels": 4, "steps": 50, "patch_size": 12, "crop_border": 3, "batch_size": 2, "seed": 1}"#).unwrap();
    let out_dir = dir.path().join("run");
    let out = run(bin()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .args(["--steps", "2", "--seed", "9"])
        .arg("--train_manifest")
        .arg(&manifest)
        .arg("--out_dir")
        .arg(&out_dir));
    assert_eq!(out.status.code(), Some(0));
    let config: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("reports/config.json")).unwrap()).unwrap();
    assert_eq!((config["steps"].as_u64(), config["seed"].as_u64()), (Some(2), Some(9)));
    assert_eq!(std::fs::read_to_string(out_dir.join("reports/loss.csv")).unwrap().lines().count(), 3);
}

#[test]
fn finetune_rejects_an_architecture_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = training_set(dir.path());
    let model = small_model(dir.path());
    let out = run(bin()
        .args(["finetune", "--depth", "4", "--feature_channels", "4", "--seed", "1", "--patch_size", "12", "--crop_border", "3"])
        .arg("--model")
        .arg(&model)
        .arg("--train_manifest")
        .arg(&manifest)
        .arg("--out_dir")
        .arg(dir.path().join("ft")));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("feature_channels"));
    let out = run(bin()
        .args(["finetune", "--depth", "3", "--feature_channels", "4", "--seed", "1", "--patch_size", "12", "--crop_border", "3"])
        .args(["--batch_size", "2", "--steps", "2", "--class", "shapes"])
        .arg("--model")
        .arg(&model)
        .arg("--train_manifest")
        .arg(&manifest)
        .arg("--out_dir")
        .arg(dir.path().join("ft")));
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(std::fs::read(&model).unwrap(), std::fs::read(dir.path().join("ft/model/model.dnet")).unwrap());
}

#[test]
fn bad_thread_environment_is_a_validation_error() {
    let out = run(bin().env("DENOISENET_THREADS", "many").arg("denoise"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("DENOISENET_THREADS"));
}

#[test]
fn diagnose_exports_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path());
    let (clean, noisy) = noisy_image(dir.path(), "a.png", 2);
    let out_dir = dir.path().join("diag");
    let out = run(bin()
        .arg("diagnose")
        .arg("--model")
        .arg(&model)
        .arg("--input")
        .arg(&noisy)
        .arg("--clean")
        .arg(&clean)
        .args(["--dump_tensors", "true"])
        .arg("--out_dir")
        .arg(&out_dir));
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("monotone-decreasing fraction"));
    let trace = out_dir.join("trace");
    assert_eq!(std::fs::read_dir(&trace).unwrap().filter(|e| e.as_ref().unwrap().path().is_file()).count(), 3 + 4 + 1 + 2);
    assert!(trace.join("tensors/index.csv").is_file());
}

#[test]
fn version_names_the_model_format() {
    let out = run(bin().arg("--version"));
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("denoisenet ") && text.contains("model format DNET v1"), "{text}");
}

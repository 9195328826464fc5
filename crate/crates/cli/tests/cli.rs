use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hesspen(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hesspen")).args(args).env("HESSPEN_OUT", out).output().unwrap()
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["estimate", "--bogus"], &["estimate", "--fn", "nope"], &["estimate"]] {
        let out = hesspen(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(hesspen(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(hesspen(dir.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn numeric_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = hesspen(
        dir.path(),
        &["train", "--dataset", "1fov", "--latent-dim", "2", "--steps", "3", "--lr-g", "1e300", "--lr-d", "1e300"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(dir.path().join("train/log.jsonl")).unwrap();
    assert!(log.lines().last().unwrap().contains("\"error\""));

    let failed = hesspen(dir.path(), &["verify", "--dims", "2..4", "--trials", "3", "--tol", "0", "--mc-trials", "0"]);
    assert_eq!(failed.status.code(), Some(2));
}

#[test]
fn product_pair_estimate_averages_to_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = hesspen(dir.path(), &["estimate", "--fn", "z1z2", "--seed", "7", "--k", "2", "--repeat", "200000"]);
    assert!(out.status.success());
    let r = report(&dir.path().join("estimate/reports/estimate.json"));
    let value = r["value"].as_f64().unwrap();
    assert!(value.is_finite() && value >= 0.0);
    let (mean, se) = (r["mean"].as_f64().unwrap(), r["std_error"].as_f64().unwrap());
    assert!((mean - 4.0).abs() <= 3.0 * se, "{mean} ± {se}");
    assert_eq!(r["exact"].as_f64(), Some(4.0));
}

#[test]
fn verify_passes_the_closed_form_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = hesspen(dir.path(), &["verify", "--dims", "2..12", "--trials", "50", "--mc-trials", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&dir.path().join("verify/reports/verify.json"));
    assert!(r["enumeration"]["max_rel_error"].as_f64().unwrap() <= 1e-10);
    assert_eq!(r["enumeration"]["cases"].as_array().unwrap().len(), 50);
    assert_eq!(r["pass"], true);
}

#[test]
fn zero_step_training_leaves_parameters_at_init() {
    let dir = tempfile::tempdir().unwrap();
    let out = hesspen(dir.path(), &["train", "--mode", "baseline", "--steps", "0", "--seed", "5"]);
    assert!(out.status.success());
    let root = dir.path().join("train");
    for entry in ["config.json", "log.jsonl", "checkpoints", "reports", "heatmaps"] {
        assert!(root.join(entry).exists(), "{entry}");
    }
    assert!(root.join("checkpoints/final.ckpt.manifest.json").exists());
    let r = report(&root.join("reports/train.json"));
    assert_eq!(r["generator_change"], 0.0);
    assert_eq!(r["discriminator_change"], 0.0);
    assert_eq!(r["steps_taken"], 0);
    let cfg = report(&root.join("config.json"));
    assert_eq!(cfg["seed"], 5);
    assert_eq!(cfg["toolkit_version"], hessian_penalty::VERSION);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\nsteps = 4\ndataset = 1fov\nlatent_dim = 2\nlambda = 0.3\n").unwrap();
    let out = hesspen(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--steps", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let effective = report(&dir.path().join("train/config.json"));
    assert_eq!(effective["config"]["steps"], 2);
    assert_eq!(effective["config"]["lambda"], 0.3);
    assert_eq!(effective["config"]["dataset"], "1fov");
    assert_eq!(fs::read_to_string(dir.path().join("train/log.jsonl")).unwrap().lines().count(), 2);

    fs::write(&cfg, "stepz = 4\n").unwrap();
    assert_eq!(hesspen(dir.path(), &["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn trained_checkpoint_feeds_eval_and_hessdump() {
    let dir = tempfile::tempdir().unwrap();
    let train = hesspen(dir.path(), &["train", "--dataset", "1fov", "--latent-dim", "2", "--steps", "3"]);
    assert!(train.status.success());
    let ckpt = dir.path().join("train/checkpoints/final.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    assert!(hesspen(dir.path(), &["eval", "--checkpoint", ckpt, "--ppl-samples", "100"]).status.success());
    let r = report(&dir.path().join("eval/reports/eval.json"));
    assert_eq!(r["activeness"]["scores"].as_array().unwrap().len(), 2);

    assert!(hesspen(dir.path(), &["hessdump", "--checkpoint", ckpt, "--top", "2"]).status.success());
    let r = report(&dir.path().join("hessdump/reports/hessdump.json"));
    for f in r["files"].as_array().unwrap() {
        assert!(dir.path().join("hessdump").join(f.as_str().unwrap()).exists());
    }
    assert_eq!(r["files"].as_array().unwrap().len(), 4);
}

#[test]
fn directions_recover_a_builtin_rotation() {
    let dir = tempfile::tempdir().unwrap();
    let out = hesspen(dir.path(), &["directions", "--fn", "rotated-separable", "--dim", "3", "--steps", "1500"]);
    assert!(out.status.success());
    let r = report(&dir.path().join("directions/reports/directions.json"));
    assert!(r["alignment_min"].as_f64().unwrap() >= 0.9);
    assert!(r["max_orthogonality_error"].as_f64().unwrap() <= 1e-6);
    let log = fs::read_to_string(dir.path().join("directions/log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1500);
}

#[test]
fn data_export_writes_manifest_and_images() {
    let dir = tempfile::tempdir().unwrap();
    assert!(hesspen(dir.path(), &["data", "--dataset", "2factor", "--count", "3"]).status.success());
    let root = dir.path().join("data/dataset");
    assert!(root.join("manifest.json").exists());
    assert_eq!(fs::read_dir(root.join("images")).unwrap().count(), 3);
}

use std::path::Path;
use std::process::{Command, Output};

fn carflow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carflow")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn tiny_train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "-q", "--variant", "joint", "--steps", "20", "--set", "eval_every=10", "--set", "eval_samples=100", "--set", "batch_size=64", "-o", "run"];
    args.extend_from_slice(extra);
    carflow(&args, dir)
}

#[test]
fn train_eval_sample_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tiny_train(tmp.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("run");
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("# carflow metrics schema v1\n"));
    assert_eq!(csv.lines().count(), 2 + 3);
    let cfg = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(cfg.contains("variant = \"joint\""));
    assert!(cfg.contains("batch_size = 64"));

    let out = carflow(&["eval", "--checkpoint", "run", "--samples", "50"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rec: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rec["step"], 20);
    assert_eq!(rec["w1"].as_array().unwrap().len(), 2);

    let out = carflow(&["sample", "--checkpoint", "run/checkpoint.bin", "-n", "3", "--class", "B", "-o", "s.jsonl", "--set", "sampler.steps=10"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(tmp.path().join("s.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for l in &lines {
        assert_eq!(l["y"], 1);
        let z = l["z"].as_array().unwrap();
        assert_eq!(z.len(), 11);
        assert!(l["x1"].is_number());
    }
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c.toml"), "variant = \"baseline\"\nseed = 3\n[optimizer.backbone]\nlearning_rate = 0.5\n").unwrap();
    let out = tiny_train(tmp.path(), &["--config", "c.toml", "--set", "optimizer.backbone.learning_rate=2e-5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = std::fs::read_to_string(tmp.path().join("run/config.toml")).unwrap();
    assert!(cfg.contains("variant = \"joint\""), "{cfg}");
    assert!(cfg.contains("seed = 3"));
    assert!(cfg.contains("learning_rate = 0.00002"), "{cfg}");
    assert!(!cfg.contains("learning_rate = 0.5"));
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["train", "--set", "no_such_key=1"],
        vec!["train", "--variant", "sideways"],
        vec!["train", "--set", "batch_size=0"],
        vec!["eval", "--checkpoint", "missing.bin"],
        vec!["suite", "fig9"],
        vec!["train", "--config", "absent.toml"],
    ] {
        let out = carflow(&args, tmp.path());
        assert!(!out.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"), "{args:?}");
    }
    assert!(!carflow(&["bogus"], tmp.path()).status.success());
}

#[test]
fn collapse_checks_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let out = carflow(&["collapse", "--points", "500", "--batch", "512"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.contains("proportional"));
}

#[test]
fn collapse_gap_of_affine_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = carflow(
        &["train", "-q", "--variant", "affine_source", "--steps", "5", "--set", "eval_every=5", "--set", "eval_samples=50", "--set", "gap_batch=64", "-o", "aff"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = carflow(&["collapse", "--checkpoint", "aff", "--batch", "64"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("collapse_gap"));
    // a baseline checkpoint has no collapse case
    tiny_train(tmp.path(), &[]);
    assert!(!carflow(&["collapse", "--checkpoint", "run"], tmp.path()).status.success());
}

#[test]
fn tiny_suite_reuses_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["suite", "appD_uncond", "-q", "--seeds", "0", "--steps", "10", "--set", "eval_every=10", "--set", "eval_samples=50", "--set", "batch_size=32", "-o", "out"];
    let out = carflow(&args, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("out/appD_uncond/report.md").exists());
    let manifest = tmp.path().join("out/runs/source_only_seed0/manifest.json");
    let before = std::fs::read_to_string(&manifest).unwrap();
    assert!(carflow(&args, tmp.path()).status.success());
    assert_eq!(std::fs::read_to_string(&manifest).unwrap(), before);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_sparserl");

fn sparserl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn short_run(extra: &[&str], out: &Path) -> Output {
    let mut args = vec![
        "train",
        "--profile",
        "desk",
        "--steps",
        "1500",
        "--set",
        "warmup=500",
        "--set",
        "eval-interval=500",
        "--set",
        "eval-episodes=1",
        "--set",
        "mask-update-interval=100",
        "--set",
        "buffer-check-interval=100",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    sparserl(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_smoke_writes_full_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = short_run(
        &["--algo", "td3", "--env", "pendulum", "--topology", "rlx2", "--actor-sparsity", "0.9", "--critic-sparsity", "0.85"],
        &out,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["manifest.json", "metrics.csv", "summary.json", "checkpoint.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let masks = fs::read_dir(out.join("masks")).unwrap().count();
    assert_eq!(masks, 9);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        "step,eval_return,buffer_size,policy_distance,drops,actor_active,critic_active,train_flops_cum"
    );
    assert_eq!(metrics.lines().count(), 1 + 3);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["final_score"].as_f64().unwrap().is_finite());
    let size = summary["flops"]["normalized_total_size"].as_f64().unwrap();
    assert!(size > 0.0 && size < 0.2, "size ratio {size}");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["env"], "pendulum");
    assert_eq!(manifest["seeds"], serde_json::json!([0]));
    assert_eq!(manifest["fingerprint"].as_str().unwrap().len(), 64);
}

#[test]
fn sac_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sac");
    let o = short_run(&["--algo", "sac", "--env", "pointmass", "--seed", "3"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["alpha"].as_f64().unwrap() > 0.0);
}

#[test]
fn missing_env_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = short_run(&["--algo", "td3"], &dir.path().join("x"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--env"), "{}", stderr(&o));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(sparserl(&["train", "--algo", "ppo", "--env", "pendulum"]).status.code(), Some(2));
    assert_eq!(sparserl(&["train", "--env", "pendulum", "--bogus"]).status.code(), Some(2));
    assert_eq!(sparserl(&["train", "--env", "pendulum", "--actor-sparsity", "1.5"]).status.code(), Some(2));
    assert_eq!(sparserl(&["train", "--env", "pendulum", "--set", "nonsense=1"]).status.code(), Some(2));
    assert_eq!(sparserl(&[]).status.code(), Some(2));
    assert_eq!(sparserl(&["--help"]).status.code(), Some(0));
}

#[test]
fn verify_single_suite() {
    let o = sparserl(&["verify", "--suite", "decomposition"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("decomposition") && text.contains("PASS"), "{text}");
}

#[test]
fn verify_all_suites_pass() {
    let o = sparserl(&["verify"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(" PASS ")).count(), 4, "{text}");
}

#[test]
fn injected_fault_fails_conservation() {
    let o = sparserl(&["verify", "--suite", "conservation", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("conservation") && text.contains("FAIL"), "{text}");
}

#[test]
fn static_masks_round_trip_and_stay_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = short_run(&["--env", "pendulum", "--topology", "rlx2"], &first);
    assert!(o.status.success(), "{}", stderr(&o));
    let second = dir.path().join("second");
    let masks = first.join("masks");
    let o = short_run(
        &["--env", "pendulum", "--topology", "static_mask", "--mask-dir", masks.to_str().unwrap(), "--seed", "7"],
        &second,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for entry in fs::read_dir(&masks).unwrap() {
        let name = entry.unwrap().file_name();
        let before = fs::read_to_string(masks.join(&name)).unwrap();
        let after = fs::read_to_string(second.join("masks").join(&name)).unwrap();
        assert_eq!(before, after, "{name:?} changed");
    }
}

#[test]
fn static_mask_without_dir_is_a_usage_error() {
    let o = sparserl(&["train", "--env", "pendulum", "--topology", "static_mask"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identical_runs_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for out in [&a, &b] {
        let o = short_run(&["--env", "pendulum", "--seed", "11"], out);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let manifest = a.join("manifest.json");
    let o = sparserl(&["train", "--manifest", manifest.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = |p: &Path| fs::read(p.join("metrics.csv")).unwrap();
    assert_eq!(metrics(&a), metrics(&b));
    assert_eq!(metrics(&a), metrics(&c));
    let fp = |p: &Path| {
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("manifest.json")).unwrap()).unwrap();
        m["fingerprint"].clone()
    };
    assert_eq!(fp(&a), fp(&c));
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "env = pointmass\nseed = 4\nhidden = 16,16\n").unwrap();
    let out = dir.path().join("run");
    let o = short_run(&["--config", cfg.to_str().unwrap(), "--seed", "6"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["env"], "pointmass");
    assert_eq!(m["config"]["seed"], 6);
    assert_eq!(m["config"]["hidden"], serde_json::json!([16, 16]));
}

#[test]
fn malformed_config_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "env = pendulum\nthis line has no equals sign\n").unwrap();
    let o = sparserl(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":2:"), "{}", stderr(&o));
}

#[test]
fn small_sweep_includes_dense_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = sparserl(&[
        "sweep",
        "--env",
        "pendulum",
        "--profile",
        "desk",
        "--steps",
        "1000",
        "--set",
        "warmup=500",
        "--set",
        "eval-interval=500",
        "--set",
        "eval-episodes=1",
        "--grid",
        "0.5,0.9",
        "--seeds",
        "2",
        "--jobs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 4, "{table}");
    assert!(rows[1].starts_with("dense,0,"));
    assert!(rows[2].starts_with("0.5,0.5,") && rows[2].ends_with(",2,0"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(summary["cells"].as_array().unwrap().len(), 6);
    assert!(out.join("dense/seed1/metrics.csv").is_file());
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pbc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbc")).args(args).output().expect("pbc runs")
}

fn ok(args: &[&str]) -> String {
    let o = pbc(args);
    assert!(
        o.status.success(),
        "pbc {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    pbc(args).status.code().expect("exit code")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Simulates learning and test cohorts; returns their paths.
fn cohorts(dir: &Path, n: &str) -> (PathBuf, PathBuf) {
    let l = dir.join("sim_l");
    let t = dir.join("sim_t");
    ok(&["simulate", "--n-subjects", n, "--seed", "11", "--out", s(&l)]);
    ok(&["simulate", "--n-subjects", n, "--seed", "12", "--out", s(&t)]);
    (l.join("cohort.csv"), t.join("cohort.csv"))
}

#[test]
fn predictions_fixture_metrics() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("v");
    let stdout = ok(&["validate", "--predictions", s(&fixture("test_sample_predictions.csv")), "--out", s(&out)]);
    assert!(stdout.contains("fp_rate 0.044"), "{stdout}");
    assert!(stdout.contains("savings 0.734"), "{stdout}");
    let r = json(&out.join("report.json"));
    assert!((r["ppv"].as_f64().unwrap() - 0.9917).abs() < 1e-4);
    assert!((r["npv"].as_f64().unwrap() - 0.4943).abs() < 1e-4);
}

#[test]
fn missing_test_path_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let (l, _) = cohorts(dir.path(), "30");
    let missing = dir.path().join("absent.csv");
    assert_eq!(code(&["validate", "--learning", s(&l), "--test", s(&missing), "--out", s(&dir.path().join("v"))]), 2);
    assert!(!dir.path().join("v/report.json").exists());
}

#[test]
fn validate_grid_and_curves() {
    let dir = TempDir::new().unwrap();
    let (l, t) = cohorts(dir.path(), "120");
    let out = dir.path().join("v");
    ok(&[
        "validate",
        "--learning",
        s(&l),
        "--test",
        s(&t),
        "--thresholds",
        "200,350",
        "--budgets",
        "0.05,0.10",
        "--out",
        s(&out),
    ]);
    let r = json(&out.join("report.json"));
    let entries = r["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 4);
    for e in entries {
        let fp = e["resubstitution"]["fp_rate"].as_f64().unwrap();
        assert!(fp <= e["fp_budget"].as_f64().unwrap() + 1e-12);
    }
    for k in ["200", "350"] {
        assert!(out.join(format!("roc_learning_k{k}.csv")).exists());
        assert!(out.join(format!("roc_test_k{k}.csv")).exists());
        assert!(out.join(format!("roc_k{k}.svg")).exists());
    }
}

#[test]
fn single_replicate_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (l, _) = cohorts(dir.path(), "30");
    assert_eq!(code(&["bootstrap", "--learning", s(&l), "--replicates", "1", "--out", s(&dir.path().join("b"))]), 2);
}

#[test]
fn bootstrap_is_deterministic_and_complete() {
    let dir = TempDir::new().unwrap();
    let (l, _) = cohorts(dir.path(), "80");
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        ok(&[
            "bootstrap",
            "--learning",
            s(&l),
            "--replicates",
            "20",
            "--seed",
            "4",
            "--thresholds",
            "350",
            "--budgets",
            "0.10",
            "--threads",
            threads,
            "--out",
            s(&out),
        ]);
        out
    };
    let a = run("b1", "1");
    let b = run("b2", "4");
    assert_eq!(fs::read(a.join("bootstrap.json")).unwrap(), fs::read(b.join("bootstrap.json")).unwrap());
    let r = json(&a.join("bootstrap.json"));
    let metrics: Vec<&str> = r["intervals"].as_array().unwrap().iter().map(|c| c["metric"].as_str().unwrap()).collect();
    for m in ["sensitivity", "ppv", "npv"] {
        assert!(metrics.contains(&m), "{metrics:?}");
    }
    for c in r["intervals"].as_array().unwrap() {
        assert!(c["lower"].as_f64().unwrap() <= c["upper"].as_f64().unwrap());
    }
}

#[test]
fn glmm_artifact_is_tagged() {
    let dir = TempDir::new().unwrap();
    let (l, _) = cohorts(dir.path(), "60");
    let out = dir.path().join("f");
    ok(&["fit", "--model", "glmm", "--k", "200", "--data", s(&l), "--out", s(&out)]);
    let a = json(&out.join("model_k200.json"));
    assert_eq!(a["kind"], "glmm");
    assert_eq!(a["threshold_k"].as_f64(), Some(200.0));
}

#[test]
fn refit_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (l, _) = cohorts(dir.path(), "50");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["fit", "--learning", s(&l), "--out", s(&a)]);
    ok(&["fit", "--learning", s(&l), "--out", s(&b)]);
    assert_eq!(fs::read(a.join("model.json")).unwrap(), fs::read(b.join("model.json")).unwrap());
    assert_eq!(json(&a.join("model.json"))["kind"], "lmm");
}

#[test]
fn noiseless_cohort_gives_vanishing_residual_variance() {
    let dir = TempDir::new().unwrap();
    for seed in ["5", "6"] {
        let sim = dir.path().join(format!("sim{seed}"));
        let fit = dir.path().join(format!("fit{seed}"));
        ok(&["simulate", "--n-subjects", "40", "--sigma2", "0", "--seed", seed, "--out", s(&sim)]);
        ok(&["fit", "--learning", s(&sim.join("cohort.csv")), "--out", s(&fit)]);
        let sigma2 = json(&fit.join("model.json"))["sigma2_hat"].as_f64().unwrap();
        assert!(sigma2 < 1e-6, "seed {seed}: {sigma2}");
    }
}

#[test]
fn replay_reproduces_outputs() {
    let dir = TempDir::new().unwrap();
    let (l, t) = cohorts(dir.path(), "60");
    let out = dir.path().join("v");
    ok(&["validate", "--learning", s(&l), "--test", s(&t), "--out", s(&out)]);
    let again = dir.path().join("v2");
    let stdout = ok(&["replay", s(&out.join("manifest.json")), "--out", s(&again)]);
    assert!(stdout.contains("match"), "{stdout}");

    fs::write(&l, "subject_id,time_months,cd4,wbc,lymph_pct\n").unwrap();
    assert_eq!(code(&["replay", s(&out.join("manifest.json")), "--out", s(&again)]), 1);
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    let from_file = dir.path().join("from_file");
    let from_flag = dir.path().join("from_flag");
    fs::write(&cfg, format!("# simulation\nn_subjects = 12\nseed = 3\nout = {}\n", s(&from_file))).unwrap();
    ok(&["--config", s(&cfg), "simulate"]);
    ok(&["--config", s(&cfg), "simulate", "--n-subjects", "15", "--out", s(&from_flag)]);
    let m = json(&from_flag.join("manifest.json"));
    assert_eq!(m["config"]["n_subjects"], "15");
    assert_eq!(m["config"]["seed"], "3");
    let subjects = |p: &Path| json(&p.join("spec.json"))["n_subjects"].as_u64().unwrap();
    assert_eq!(subjects(&from_file), 12);
    assert_eq!(subjects(&from_flag), 15);
}

#[test]
fn unknown_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "replicatez = 5\n").unwrap();
    assert_eq!(code(&["--config", s(&cfg), "simulate", "--out", s(&dir.path().join("x"))]), 2);
    assert_eq!(code(&["--set", "nope=1", "keys"]), 0);
    assert_eq!(code(&["--set", "nope=1", "simulate", "--out", s(&dir.path().join("y"))]), 2);
}

#[test]
fn single_class_glmm_exits_with_separation() {
    let dir = TempDir::new().unwrap();
    let (l, _) = cohorts(dir.path(), "30");
    assert_eq!(
        code(&["fit", "--model", "glmm", "--k", "1", "--learning", s(&l), "--out", s(&dir.path().join("f"))]),
        5
    );
}

#[test]
fn roc_both_models() {
    let dir = TempDir::new().unwrap();
    let (l, t) = cohorts(dir.path(), "60");
    let out = dir.path().join("r");
    ok(&["roc", "--model", "both", "--learning", s(&l), "--test", s(&t), "--thresholds", "350", "--out", s(&out)]);
    for f in ["roc_lmm_k350.csv", "roc_glmm_k350.csv", "roc_k350.svg", "roc_summary.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(out.join("roc_lmm_k350.csv")).unwrap();
    assert!(csv.lines().count() > 10);
}

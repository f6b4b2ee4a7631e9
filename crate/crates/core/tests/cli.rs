use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rdsandwich(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdsandwich"))
        .args(args)
        .env_remove("RD_SEED")
        .output()
        .expect("binary runs")
}

fn out_dir(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn gaussian_oracle_at_a_target_distortion() {
    let dir = tempfile::tempdir().unwrap();
    let out = rdsandwich(&["oracle", "--source", "std-gaussian:n=1", "--D", "0.25", "--out", out_dir(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("curve.csv"));
    assert_eq!(rows[0], ["lambda", "D", "R_nats", "R_bits", "converged"]);
    let r: f64 = rows[1][2].parse().unwrap();
    assert!((r - 0.5 * 4f64.ln()).abs() < 1e-9, "{r}");
    let bits: f64 = rows[1][3].parse().unwrap();
    assert!((bits - 1.0).abs() < 1e-9);
}

#[test]
fn bernoulli_oracle_matches_binary_entropy_difference() {
    let dir = tempfile::tempdir().unwrap();
    let out = rdsandwich(&["oracle", "--source", "bernoulli:p=0.5", "--D", "0.1", "--out", out_dir(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("curve.csv"));
    let r: f64 = rows[1][2].parse().unwrap();
    let h = |p: f64| -p * p.ln() - (1.0 - p) * (1.0 - p).ln();
    assert!((r - (2f64.ln() - h(0.1))).abs() < 1e-4, "{r}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = out_dir(dir.path());
    let bad_kind = rdsandwich(&["oracle", "--source", "gausian:n=2", "--D", "1", "--out", d]);
    assert_eq!(bad_kind.status.code(), Some(2));
    let err = String::from_utf8_lossy(&bad_kind.stderr);
    assert!(err.contains('^'), "{err}");

    let no_oracle = rdsandwich(&["oracle", "--source", "banana", "--D", "1", "--out", d]);
    assert_eq!(no_oracle.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_oracle.stderr).contains("grid"));

    let bad_k = rdsandwich(&["train-lb", "--source", "std-gaussian:n=1", "--lambda", "1", "--k", "0", "--out", d]);
    assert_eq!(bad_k.status.code(), Some(2));

    let bad_value = rdsandwich(&["gen-source", "--source", "gaussian:n=2,var=-1", "--count", "3", "--out", d]);
    assert_eq!(bad_value.status.code(), Some(2));
}

#[test]
fn unconverged_training_exits_4_and_says_so() {
    let dir = tempfile::tempdir().unwrap();
    let out = rdsandwich(&[
        "train-ub", "--source", "std-gaussian:n=2", "--lambda", "2", "--steps", "20", "--window", "1000",
        "--m-eval", "100", "--encoder-hidden", "4", "--out", out_dir(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(dir.path());
    assert_eq!(m["status"], "not-converged");
    assert_eq!(m["converged"], false);
}

fn small_ub(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train-ub", "--source", "gaussian:var=1.5/0.5", "--lambda", "2", "--steps", "300", "--lr", "1e-3",
        "--window", "100", "--tol", "1", "--m-eval", "200", "--encoder-hidden", "8", "--seed", "3", "--out",
        out_dir(dir),
    ];
    args.extend_from_slice(extra);
    rdsandwich(&args)
}

#[test]
fn train_ub_is_deterministic_and_replays_from_its_manifest() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(small_ub(a.path(), &[]).status.success());
    assert!(small_ub(b.path(), &[]).status.success());
    for f in ["trace.csv", "params.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let replay = rdsandwich(&[
        "--from-manifest",
        a.path().join("manifest.json").to_str().unwrap(),
        "--out",
        out_dir(c.path()),
    ]);
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
    assert_eq!(fs::read(a.path().join("params.json")).unwrap(), fs::read(c.path().join("params.json")).unwrap());
    assert_eq!(manifest(a.path())["results"], manifest(c.path())["results"]);
}

#[test]
fn seed_environment_variable_overrides_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rdsandwich"))
        .args(["gen-source", "--source", "std-gaussian:n=2", "--count", "4", "--seed", "1", "--out", out_dir(dir.path())])
        .env("RD_SEED", "9")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(dir.path())["run"]["seed"], 9);
}

#[test]
fn gen_source_and_stats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = out_dir(dir.path());
    let out = rdsandwich(&["gen-source", "--source", "gaussian:n=1,mean=3", "--count", "2000", "--out", d]);
    assert!(out.status.success());
    let samples = dir.path().join("samples.csv");
    assert_eq!(fs::read_to_string(&samples).unwrap().lines().count(), 2000);
    let stats = rdsandwich(&["stats", samples.to_str().unwrap(), "--out", d]);
    assert!(stats.status.success(), "{}", String::from_utf8_lossy(&stats.stderr));
    let v: Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert_eq!(v["count"], 2000);
    let mean = v["mean"].as_f64().unwrap();
    assert!((mean - 3.0).abs() < 5.0 * v["std_error"].as_f64().unwrap(), "{mean}");

    let bin = tempfile::tempdir().unwrap();
    let out = rdsandwich(&[
        "gen-source", "--source", "banana", "--count", "10", "--format", "binary", "--out", out_dir(bin.path()),
    ]);
    assert!(out.status.success());
    let raw = fs::read(bin.path().join("samples.rds")).unwrap();
    assert_eq!(&raw[..4], b"RDS1");
    assert_eq!(raw.len(), 16 + 10 * 2 * 8);
}

#[test]
fn train_lb_then_diag_ck_from_its_manifest() {
    let lb = tempfile::tempdir().unwrap();
    let out = rdsandwich(&[
        "train-lb", "--source", "std-gaussian:n=1", "--lambda", "0.5", "--k", "64", "--m", "2", "--hidden", "6",
        "--steps", "30", "--lr", "1e-3", "--m-eval", "8", "--window", "10", "--tol", "10", "--out", out_dir(lb.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trace.csv", "params.json", "log_ck.csv", "envelope.csv", "manifest.json"] {
        assert!(lb.path().join(f).exists(), "{f}");
    }
    let m = manifest(lb.path());
    let lcb = m["results"]["intercept_lcb"].as_f64().unwrap();
    // F(1/2) = 1/2 for N(0, 1).
    assert!(lcb <= 0.5, "{lcb}");

    let ck = tempfile::tempdir().unwrap();
    let out = rdsandwich(&[
        "diag-ck", "--source", "std-gaussian:n=1", "--lambda", "0.5", "--ks", "1,4,16", "--trials", "200",
        "--lb-manifest", lb.path().join("manifest.json").to_str().unwrap(), "--out", out_dir(ck.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&ck.path().join("ck.csv"));
    assert_eq!(rows.len(), 4);
}

#[test]
fn sandwich_writes_the_gap_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = rdsandwich(&[
        "sandwich", "--source", "std-gaussian:n=1", "--lambdas", "0.75,2", "--lb-k", "64", "--lb-m", "2",
        "--lb-hidden", "6", "--lb-steps", "20", "--lb-m-eval", "8", "--ub-steps", "200", "--ub-hidden", "8",
        "--ub-m-eval", "200", "--out", out_dir(dir.path()),
    ]);
    // Short runs do not converge; the artifacts are still written.
    assert!(matches!(out.status.code(), Some(0) | Some(4)), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.json", "gap.csv", "upper.csv", "lower.csv", "envelope.csv", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let gap = csv_rows(&dir.path().join("gap.csv"));
    assert_eq!(gap[0], ["D", "R_upper_nats", "R_upper_ci", "R_lower_nats", "gap_nats", "gap_bits"]);
}

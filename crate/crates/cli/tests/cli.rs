use std::fs;
use std::process::{Command, Output};

fn corbin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corbin"))
        .args(args)
        .env("CORBIN_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn bounds_prints_json() {
    let o = corbin(&[
        "bounds",
        "--seed",
        "1",
        "--override",
        "epsilons=0.5,1",
        "--override",
        "gamma=0.2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("\"schema_version\""));
    assert!(text.contains("mse_bound_corbin"));
    assert!(text.contains("mse_bound_aug"));
}

#[test]
fn mse_surface_writes_csv_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("surface.csv");
    let cfg = dir.path().join("surface.cfg");
    fs::write(&cfg, "experiment = mse-surface\nseed = 3\nepsilons = 1\nd = 2 # shared bits\ngrid = 3\nassert_dominance = true\n").unwrap();
    let o = corbin(&[
        "mse-surface",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let body = fs::read_to_string(&out).unwrap();
    let mut lines = body.lines();
    assert!(lines.next().unwrap().starts_with("# schema_version=1"));
    assert_eq!(
        lines.next().unwrap(),
        "epsilon,d,w,w_prime,mse_corbinq,mse_ldpq_pair,mse_optimal"
    );
    assert_eq!(lines.count(), 9);
}

#[test]
fn dme_is_byte_identical_for_a_seed() {
    let args = [
        "dme",
        "--seed",
        "42",
        "--override",
        "epsilons=1",
        "--override",
        "n=10",
        "--override",
        "m=5",
        "--override",
        "replicas=200",
        "--override",
        "d=3",
    ];
    let a = corbin(&args);
    let b = corbin(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let mut other = args;
    other[2] = "43";
    assert_ne!(corbin(&other).stdout, a.stdout);
}

#[test]
fn flsim_runs_a_short_job() {
    let dir = tempfile::tempdir().unwrap();
    let audit = dir.path().join("audit.ndjson");
    let o = corbin(&[
        "flsim",
        "--seed",
        "5",
        "--override",
        "n=6",
        "--override",
        "rounds=2",
        "--override",
        "mechanism=corbin",
        "--override",
        "d=2",
        "--override",
        &format!("audit_log={}", audit.display()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2);
    let log = fs::read_to_string(&audit).unwrap();
    assert!(log.lines().all(|l| l.starts_with('{')));
    assert!(log.contains("cr_ciphertext"));
}

#[test]
fn missing_seed_is_an_error() {
    let o = corbin(&["bounds"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn unknown_key_is_rejected() {
    let o = corbin(&["dme", "--seed", "1", "--override", "bogus=3"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("x.cfg");
    fs::write(&cfg, "seed = 1\nseed = 2\n").unwrap();
    let o = corbin(&["bounds", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oversized_enumeration_is_refused() {
    let o = corbin(&[
        "mse-surface",
        "--seed",
        "1",
        "--override",
        "d=21",
        "--override",
        "grid=2",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_assertion_exits_with_one() {
    let o = corbin(&[
        "flsim",
        "--seed",
        "1",
        "--override",
        "n=4",
        "--override",
        "rounds=1",
        "--override",
        "mechanism=ldpfl",
        "--override",
        "assert_min_accuracy=1.01",
    ]);
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("assertion failed"));
    assert!(!o.stdout.is_empty());
}

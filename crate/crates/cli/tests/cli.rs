use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &["--sim-rows", "300", "--coalitions", "40", "--repetitions", "3", "--points", "2"];

fn controlshap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_controlshap"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn run_to(path: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "-o", path.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    if !extra.contains(&"--seed") {
        args.extend_from_slice(&["--seed", "11"]);
    }
    controlshap(&args)
}

#[test]
fn same_seed_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    for extra in [&["--estimator", "shapley-sampling"][..], &["--estimator", "kernelshap", "--mode", "independent"][..]] {
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        assert!(run_to(&a, extra).status.success());
        assert!(run_to(&b, extra).status.success());
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}

#[test]
fn different_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert!(run_to(&a, &[]).status.success());
    assert!(run_to(&b, &["--seed", "12"]).status.success());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn report_subcommand_prints_summary_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let csv = dir.path().join("r.csv");
    assert!(run_to(&json, &["--estimator", "kernelshap", "--variance", "ks-bootstrap", "--bootstrap", "20"]).status.success());
    let out = controlshap(&["report", json.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(!out.stdout.is_empty());
    let table = std::fs::read_to_string(&csv).unwrap();
    // Header plus one line per point and feature.
    assert_eq!(table.lines().count(), 1 + 2 * 10);
}

#[test]
fn precompute_dj_writes_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("dj");
    let out = controlshap(&["precompute-dj", "--sim-rows", "300", "--dj-cache", cache.to_str().unwrap(), "--n-perms", "200"]);
    assert!(out.status.success());
    let path = String::from_utf8(out.stdout).unwrap();
    assert!(Path::new(path.trim()).exists());
    let json = dir.path().join("r.json");
    assert!(run_to(&json, &["--dj-cache", cache.to_str().unwrap()]).status.success());
}

#[test]
fn precompute_without_cache_dir_is_an_error() {
    let out = controlshap(&["precompute-dj", "--sim-rows", "300"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_to(&dir.path().join("r.json"), &["--estimator", "shapley-sampling", "--variance", "ks-grouped"]);
    assert_eq!(out.status.code(), Some(2));
    let missing = controlshap(&["report", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const MIXTURE: &str =
    r#"{"family": "gaussian_mixture", "dim": 1, "weights": [0.5, 0.5], "means": [2, -2], "stds": [3, 3]}"#;

fn sgmlab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgmlab"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn sgmlab")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn constants_reports_benchmark_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let pot = write(dir.path(), "p.json", MIXTURE);
    let out = sgmlab(dir.path(), &["constants", "--potential", pot.to_str().unwrap()]);
    assert!(out.status.success());
    let v = json(&out);
    assert!((v["constants"]["t_bar"].as_f64().unwrap() - 3.237716358).abs() < 1e-8);
    assert!(dir.path().join("constants.json").exists());
}

#[test]
fn score_profile_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let pot = write(dir.path(), "p.json", MIXTURE);
    let out = sgmlab(
        dir.path(),
        &["score-profile", "--potential", pot.to_str().unwrap(), "--points", "50"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("score_profile.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("#schema=1"));
    assert!(lines.next().unwrap().starts_with("#config="));
    assert_eq!(lines.next(), Some("t,score_x=-0.8,score_x=0.5"));
    assert_eq!(lines.count(), 50);
    let svg = fs::read_to_string(dir.path().join("score_profile.svg")).unwrap();
    assert!(svg.contains("stroke-dasharray"));
}

#[test]
fn sample_is_reproducible_and_seed_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let pot = write(dir.path(), "p.json", MIXTURE);
    let cfg = write(
        dir.path(),
        "s.json",
        r#"{"T": 4.0, "epsilon": 0.01, "gamma": 0.05, "n": 500, "seed": 3}"#,
    );
    let args = [
        "sample",
        "--potential",
        pot.to_str().unwrap(),
        "--sampler",
        cfg.to_str().unwrap(),
    ];
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(sgmlab(&a, &args).status.success());
    assert!(sgmlab(&b, &args).status.success());
    let mut seeded = vec!["--seed", "4"];
    seeded.extend_from_slice(&args);
    assert!(sgmlab(&c, &seeded).status.success());
    let read = |d: &Path| fs::read_to_string(d.join("samples.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn fit_then_sample_with_model() {
    let dir = tempfile::tempdir().unwrap();
    let pot = write(dir.path(), "p.json", MIXTURE);
    let fit = write(
        dir.path(),
        "f.json",
        r#"{"T": 4.0, "epsilon": 0.01, "n_data": 3000, "seed": 1}"#,
    );
    let feats = write(dir.path(), "x.json", r#"{"x_features": 4, "t_features": 3, "seed": 2}"#);
    let out = sgmlab(
        dir.path(),
        &[
            "fit",
            "--potential",
            pot.to_str().unwrap(),
            "--fit",
            fit.to_str().unwrap(),
            "--features",
            feats.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["params"], 16);
    let model = dir.path().join("model.json");
    let cfg = write(
        dir.path(),
        "s.json",
        r#"{"T": 4.0, "epsilon": 0.01, "gamma": 0.05, "n": 300}"#,
    );
    let out = sgmlab(
        dir.path(),
        &[
            "sample",
            "--potential",
            pot.to_str().unwrap(),
            "--sampler",
            cfg.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["diverged"], 0);
}

#[test]
fn w2_of_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", "x0\n1.0\n-2.0\n0.5\n");
    let out = sgmlab(
        dir.path(),
        &["w2", "--a", a.to_str().unwrap(), "--b", a.to_str().unwrap()],
    );
    assert!(out.status.success());
    assert_eq!(json(&out)["value"].as_f64().unwrap(), 0.0);
}

#[test]
fn bounds_with_delta_reports_operating_point_below_delta() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = write(
        dir.path(),
        "b.json",
        r#"{"d": 1, "second_moment": 13.0, "K": 0.0987654321, "mu": 0.0123456790, "T": 8.0,
            "epsilon": 0.01, "gamma": 0.001, "K1": 1.0, "K3": 1.0, "K4": 1.0, "K_total": 2.0}"#,
    );
    let out = sgmlab(
        dir.path(),
        &["bounds", "--inputs", inputs.to_str().unwrap(), "--delta", "0.5"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!(v["operating_point"]["half_order"]["total"]["value"].as_f64().unwrap() < 0.5);
    assert!(v["full_order"]["total"]["ln"].is_number());
}

#[test]
fn sweep_rows_follow_grid_order() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "sweep.json",
        &format!(
            r#"{{"potential": {MIXTURE}, "gammas": [0.2, 0.1], "epsilons": [0.01], "horizons": [4.0],
                "replicates": 2, "n": 400, "seed": 9}}"#
        ),
    );
    let out = sgmlab(dir.path(), &["sweep", "--spec", spec.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["rows"], 4);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(3).map(|l| l.split(',').collect()).collect();
    let keys: Vec<(&str, &str)> = rows.iter().map(|r| (r[0], r[3])).collect();
    assert_eq!(keys, vec![("0.2", "0"), ("0.2", "1"), ("0.1", "0"), ("0.1", "1")]);
}

#[test]
fn verify_assumptions_passes_for_builtin_families() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgmlab(dir.path(), &["verify-assumptions", "--pairs", "500"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let checks = v.as_array().unwrap();
    assert_eq!(checks.len(), 7);
    let nonconvex = checks.iter().find(|c| c["family"] == "max_norm_nonconvex").unwrap();
    assert_eq!(nonconvex["k_positive_detected"], true);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = sgmlab(dir.path(), &["constants", "--potential", "/nonexistent.json"]);
    assert_eq!(missing.status.code(), Some(1));
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"family": "gaussian_mixture", "weights": [1.0], "means": [0], "stds": [-1]}"#,
    );
    assert_eq!(
        sgmlab(dir.path(), &["constants", "--potential", bad.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
    let wrong = write(dir.path(), "mn.json", r#"{"family": "max_norm", "dim": 2}"#);
    let out = sgmlab(
        dir.path(),
        &[
            "verify-assumptions",
            "--potential",
            wrong.to_str().unwrap(),
            "--pairs",
            "200",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let claimed = write(
        dir.path(),
        "claimed.json",
        r#"{"family": "max_norm", "dim": 2, "semiconvexity": {"K": 0.0, "mu": 2.0, "R": 1.0}}"#,
    );
    let out = sgmlab(
        dir.path(),
        &[
            "verify-assumptions",
            "--potential",
            claimed.to_str().unwrap(),
            "--pairs",
            "2000",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let dw = write(dir.path(), "dw.json", r#"{"family": "double_well", "dim": 2}"#);
    assert_eq!(
        sgmlab(dir.path(), &["score-profile", "--potential", dw.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

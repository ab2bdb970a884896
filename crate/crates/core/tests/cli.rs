mod common;

use std::path::Path;

use common::{config_path, csv_column, output_files, read_csv, run_cli};

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SMALL_EXPERIMENT: &str = r#"{
  "populations": [
    {"kind": "finite_atoms", "points": [[-0.8], [0.1], [0.6]], "weights": [0.2, 0.5, 0.3]},
    {"kind": "finite_atoms", "points": [[-0.4], [0.3], [0.9]], "weights": [0.4, 0.35, 0.25]}
  ],
  "alpha": [0.5, 0.5],
  "epsilon": 1.0,
  "n_grid": [10, 20, 40],
  "reps": 12,
  "seed": 5,
  "epsilon_grid": [1.0, 0.1],
  "perturbations": [0.0, 0.05, 0.1]
}"#;

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn solve_dirac_writes_primal_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = config_path("dirac.json");
    let r = run_cli(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let sol: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    assert!((sol["primal_value"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let m = manifest(&out);
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["artifact_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    for f in m["files"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).exists());
    }
}

#[test]
fn missing_config_exits_2_naming_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let r = run_cli(&["solve", "--config", missing.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("nope.json"), "{}", r.stderr);
}

#[test]
fn zero_reps_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", &SMALL_EXPERIMENT.replace("\"reps\": 12", "\"reps\": 0"));
    let out = tmp.path().join("out");
    let r = run_cli(&["rate-cost", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("reps"), "{}", r.stderr);
    assert_eq!(manifest(&out)["exit_code"], 2);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run_cli(&["frobnicate"]).code, 2);
    assert_eq!(run_cli(&["solve"]).code, 2);
    assert_eq!(run_cli(&["--version"]).code, 0);
}

#[test]
fn non_convergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "p.json",
        r#"{"marginals": [
            {"points": [[-0.9], [0.1], [0.8]], "weights": [0.2, 0.5, 0.3]},
            {"points": [[-0.4], [0.3], [0.9]], "weights": [0.4, 0.35, 0.25]}
          ], "alpha": [0.5, 0.5], "epsilon": 0.01,
          "solver": {"max_sweeps": 2}}"#,
    );
    let out = tmp.path().join("out");
    let r = run_cli(&["barycenter", "--config", &cfg, "--out", out.to_str().unwrap(), "--tol", "1e-15"]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(out.join("solution.json").exists());
    assert!(!out.join("barycenter.json").exists());
    assert_eq!(manifest(&out)["effective_config"]["solver"]["tol"], 1e-15);
}

#[test]
fn capacity_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "grid.json",
        r#"{"populations": [
            {"kind": "uniform_grid", "dim": 1, "atoms_per_axis": 25},
            {"kind": "uniform_grid", "dim": 1, "atoms_per_axis": 25},
            {"kind": "uniform_grid", "dim": 1, "atoms_per_axis": 25}
          ], "alpha": [0.3, 0.3, 0.4], "epsilon": 1.0}"#,
    );
    let out = tmp.path().join("out");
    let r = run_cli(&["exact", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(r.code, 4, "{}", r.stderr);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("exact.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "cap-exceeded");
}

#[test]
fn every_subcommand_writes_its_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", SMALL_EXPERIMENT);
    let expect: &[(&str, &[&str])] = &[
        ("solve", &["solution.json", "potentials.csv"]),
        ("barycenter", &["barycenter.json", "barycenter.csv"]),
        ("exact", &["exact.json", "coupling.csv", "exact_barycenter.csv"]),
        ("rate-cost", &["rate.csv", "summary.csv", "slope.csv", "result.json"]),
        ("rate-bary", &["rate.csv", "summary.csv", "slope.csv", "result.json"]),
        (
            "concentration",
            &["rate_barycenter.csv", "summary_coupling.csv", "quantiles_barycenter.csv", "slope_coupling.csv"],
        ),
        ("gamma", &["gamma.csv", "result.json"]),
        ("stability", &["stability.csv", "result.json"]),
        ("validate", &["validation.json"]),
    ];
    for (cmd, files) in expect {
        let out = tmp.path().join(cmd);
        let r = run_cli(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(r.code, 0, "{cmd}: {}", r.stderr);
        for f in *files {
            assert!(out.join(f).exists(), "{cmd} did not write {f}");
        }
        assert!(out.join("manifest.json").exists());
    }
    let (header, rows) = read_csv(&tmp.path().join("rate-cost/rate.csv"));
    assert_eq!(header, ["N", "rep", "statistic", "converged", "seed"]);
    assert_eq!(rows.len(), 36);
    let (header, _) = read_csv(&tmp.path().join("rate-cost/summary.csv"));
    assert_eq!(header, ["N", "mean", "variance", "mse", "stderr", "n_reps"]);
    let (header, _) = read_csv(&tmp.path().join("rate-cost/slope.csv"));
    assert_eq!(header, ["slope", "intercept", "r2", "n_points"]);
    // 17 significant digits.
    let stat = &rows[0][2];
    let mantissa = stat.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
    assert_eq!(mantissa.len(), 17, "{stat}");
}

#[test]
fn seed_override_changes_rate_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", SMALL_EXPERIMENT);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run_cli(&["rate-cost", "--config", &cfg, "--out", a.to_str().unwrap()]).code, 0);
    assert_eq!(run_cli(&["rate-cost", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "6"]).code, 0);
    assert_ne!(csv_column(&a.join("rate.csv"), "seed"), csv_column(&b.join("rate.csv"), "seed"));
    assert_eq!(manifest(&b)["seed"], 6);
}

#[test]
fn outputs_independent_of_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", SMALL_EXPERIMENT);
    for cmd in ["rate-cost", "rate-bary", "concentration"] {
        let runs: Vec<_> = ["1", "3", "3"]
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let out = tmp.path().join(format!("{cmd}-{k}"));
                let r = run_cli(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", t]);
                assert_eq!(r.code, 0, "{}", r.stderr);
                output_files(&out)
            })
            .collect();
        assert_eq!(runs[0], runs[1], "{cmd}: threads 1 vs 3");
        assert_eq!(runs[1], runs[2], "{cmd}: repeated run");
    }
}

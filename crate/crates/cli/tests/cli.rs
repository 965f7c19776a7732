use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_factorcov"));
    c.env_remove("FACTORCOV_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("failed to launch binary")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Deterministic two-factor panel with pseudo-random noise, `p` rows and `t` columns.
fn write_panel(dir: &Path, p: usize, t: usize) -> PathBuf {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut noise = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut text = String::new();
    for i in 0..p {
        let row: Vec<String> = (0..t)
            .map(|j| {
                let f1 = (j as f64 * 0.7).sin();
                let f2 = (j as f64 * 1.3 + 0.4).cos();
                let v = (1.0 + i as f64 * 0.1) * f1 + ((i % 5) as f64 - 2.0) * f2 + 0.8 * noise();
                format!("{v:.6}")
            })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let path = dir.join("data.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn estimate_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    let data = write_panel(dir.path(), 30, 40);
    let out = dir.path().join("out");
    let o = run(&["estimate", "--method", "2", "--k", "2", "--subset", "0..9", data.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cov = fs::read_to_string(out.join("covariance.csv")).unwrap();
    assert_eq!(cov.lines().count(), 10);
    assert!(cov.lines().all(|l| l.split(',').count() == 10));
    assert_eq!(fs::read_to_string(out.join("factors.csv")).unwrap().lines().count(), 40);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["k"], 2);
    assert_eq!(summary["method"], "M2");
    assert!(summary["idio_min_eigenvalue"].as_f64().unwrap() > 0.0);
    assert!(out.join("timings.json").exists());
}

#[test]
fn estimate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let data = write_panel(dir.path(), 24, 30);
    let mut outputs = Vec::new();
    for run_id in 0..2 {
        let out = dir.path().join(format!("run{run_id}"));
        let o = run(&["estimate", "--method", "dc", "--m", "3", "--seed", "5", "--k", "auto", data.to_str().unwrap(), "-o", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(["covariance.csv", "loadings.csv", "factors.csv", "summary.json"].map(|f| fs::read(out.join(f)).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn malformed_csv_exits_2_with_position() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "1,2,3\n4,oops,6\n7,8,9\n").unwrap();
    let o = run(&["estimate", "--k", "1", data.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2, column 2"), "{}", stderr(&o));
}

#[test]
fn too_many_groups_exits_2() {
    let dir = TempDir::new().unwrap();
    let data = write_panel(dir.path(), 2, 20);
    let o = run(&["estimate", "--method", "dc", "--m", "4", "--k", "1", data.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("M > p"), "{}", stderr(&o));
}

#[test]
fn select_k_reports_curve() {
    let dir = TempDir::new().unwrap();
    let data = write_panel(dir.path(), 40, 60);
    let curve = dir.path().join("curve.csv");
    let o = run(&["select-k", "--n", "8", data.to_str().unwrap(), "--curve", curve.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["k_hat"], 2);
    assert_eq!(v["criterion_values"].as_array().unwrap().len(), 9);
    assert_eq!(fs::read_to_string(curve).unwrap().lines().count(), 10);
    let o = run(&["select-k", "--n", "8", "--criterion", "eigen-ratio", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn fisher_reports_psd_difference() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("model.json");
    let loadings: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0 + (i % 3) as f64, (i as f64 * 0.37).sin()]).collect();
    let body = serde_json::json!({"loadings": loadings, "idio_cov": {"diagonal": vec![2.0; 20]}});
    fs::write(&model, body.to_string()).unwrap();
    let o = run(&["fisher", "--subset", "0..9", model.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["psd"], true);
    assert!(v["min_eig_diff"].as_f64().unwrap() >= -1e-10);
}

#[test]
fn classify_reports_both_rules() {
    let dir = TempDir::new().unwrap();
    let data = write_panel(dir.path(), 30, 24);
    let labels = dir.path().join("labels.txt");
    fs::write(&labels, (0..24).map(|j| if j % 2 == 0 { "0\n" } else { "1\n" }).collect::<String>()).unwrap();
    let args = ["classify", data.to_str().unwrap(), "--labels", labels.to_str().unwrap(), "--k", "2", "--s-max", "8", "--splits", "4", "--seed", "3", "--c", "1"];
    let a = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let rules: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["rule"].as_str().unwrap()).collect();
    assert_eq!(rules, ["LDA-1", "LDA-2"]);
    assert_eq!(v[0]["n_splits"], 4);
    assert_eq!(a.stdout, run(&args).stdout);
}

#[test]
fn simulate_json_is_deterministic() {
    let args = ["simulate", "--s", "5", "--p", "30", "--t", "25", "--reps", "2", "--seed", "7", "--format", "json"];
    let a = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, run(&args).stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(!v["cells"].as_array().unwrap().is_empty());
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["estimate", "simulate", "benchmark", "select-k", "classify", "fisher"] {
        let o = run(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
    }
}

#[test]
fn thread_env_overrides_and_is_validated() {
    let o = bin().env("FACTORCOV_THREADS", "zero").args(["select-k", "--help"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let dir = TempDir::new().unwrap();
    let data = write_panel(dir.path(), 10, 12);
    let o = bin().env("FACTORCOV_THREADS", "zero").args(["select-k", "--n", "3", data.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().env("FACTORCOV_THREADS", "2").args(["--threads", "0", "select-k", "--n", "3", data.to_str().unwrap()]).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn numerical_failure_exits_3() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("flat.csv");
    fs::write(&data, "1,1,1,1\n".repeat(5)).unwrap();
    let o = run(&["estimate", "--k", "1", data.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("degenerate variance"), "{}", stderr(&o));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn pskf(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pskf"));
    cmd.args(args).env_remove("PSKF_WORKERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn scalar_config(lambda: f64, out: &Path) -> Value {
    json!({
        "system": {
            "A": [[1.2]], "C": [[1.0], [1.0]], "Q": [[1.0]],
            "R": [[0.1, 0.0], [0.0, 1.0]], "x0_mean": [0.0], "P0": [[1.0]]
        },
        "scheduler": {
            "beta": 0.3, "delta_high": 10.0, "delta_low": 1.0,
            "thresholds": [{"lambda_target": lambda}, {"lambda_target": lambda}]
        },
        "horizon": 40,
        "trials": 200,
        "master_seed": 3,
        "output": {"dir": out}
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn simulate_scalar_example() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write(tmp.path(), "c.json", &scalar_config(0.6, &out));
    let o = pskf(&["simulate", cfg.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let rows = csv_rows(&out.join("summary.csv"));
    assert_eq!(rows.len(), 40);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 8);
        assert_eq!(row[0], (k + 1).to_string());
        let trace: f64 = row[1].parse().unwrap();
        let lower: f64 = row[3].parse().unwrap();
        let upper: f64 = row[4].parse().unwrap();
        assert!(trace.is_finite() && trace < 10.0);
        assert!(lower <= upper);
    }
    let header = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(header.starts_with("k,trace_mean_P,trace_empirical_cov,lower_bound_trace,upper_bound_trace,energy_mean,high_rate_1,high_rate_2\n"));

    let s = read_json(&out.join("summary.json"));
    assert_eq!(s["trials"], 200);
    assert_eq!(s["truncated"], false);
    assert!((s["lambdas"][0].as_f64().unwrap() - 0.6).abs() < 1e-10);
    assert!(!out.join("matrices.json").exists());
    let eff = read_json(&out.join("effective_config.json"));
    assert!(eff["scheduler"]["thresholds"][0]["eta"].is_number());
}

#[test]
fn effective_config_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let cfg = write(tmp.path(), "c.json", &scalar_config(0.6, &first));
    assert_eq!(code(&pskf(&["simulate", cfg.to_str().unwrap(), "--trials", "50"], &[])), 0);

    let second = tmp.path().join("second");
    let eff = first.join("effective_config.json");
    let o = pskf(&["simulate", eff.to_str().unwrap(), "--out", second.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    let a = std::fs::read(first.join("summary.csv")).unwrap();
    let b = std::fs::read(second.join("summary.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(read_json(&second.join("summary.json"))["trials"], 50);
}

#[test]
fn worker_count_does_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", &scalar_config(0.5, &tmp.path().join("x")));
    let mut files = Vec::new();
    for w in ["1", "3"] {
        let out = tmp.path().join(format!("w{w}"));
        let o = pskf(&["simulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[("PSKF_WORKERS", w)]);
        assert_eq!(code(&o), 0);
        files.push(std::fs::read(out.join("summary.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);

    let o = pskf(&["simulate", cfg.to_str().unwrap()], &[("PSKF_WORKERS", "many")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn seed_override_changes_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", &scalar_config(0.6, &tmp.path().join("x")));
    let run = |seed: &str| {
        let out = tmp.path().join(format!("s{seed}"));
        let o = pskf(&["simulate", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()], &[]);
        assert_eq!(code(&o), 0);
        std::fs::read(out.join("summary.csv")).unwrap()
    };
    assert_ne!(run("1"), run("2"));
}

#[test]
fn zero_trials_is_a_validation_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let mut c = scalar_config(0.6, &out);
    c["trials"] = json!(0);
    let cfg = write(tmp.path(), "c.json", &c);
    let o = pskf(&["simulate", cfg.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("trials"));
    assert!(!out.exists());

    let cfg = write(tmp.path(), "d.json", &scalar_config(0.6, &out));
    assert_eq!(code(&pskf(&["simulate", cfg.to_str().unwrap(), "--trials", "0"], &[])), 2);
}

#[test]
fn invalid_documents() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");

    let mut c = scalar_config(0.6, &out);
    c["system"]["R"] = json!([[1.0, 0.0], [0.0, -1.0]]);
    let cfg = write(tmp.path(), "r.json", &c);
    assert_eq!(code(&pskf(&["simulate", cfg.to_str().unwrap()], &[])), 2);

    let mut c = scalar_config(0.6, &out);
    c["scheduler"]["thresholds"][1] = json!({"eta": 1.0, "lambda_target": 0.6});
    let cfg = write(tmp.path(), "t.json", &c);
    assert_eq!(code(&pskf(&["analyze", cfg.to_str().unwrap()], &[])), 2);

    let mut c = scalar_config(0.6, &out);
    c["scheduler"]["thresholds"][0] = json!({"lambda_target": 0.1});
    let cfg = write(tmp.path(), "u.json", &c);
    let o = pskf(&["simulate", cfg.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn unreadable_config() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let o = pskf(&["simulate", missing.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));

    let garbled = tmp.path().join("bad.json");
    std::fs::write(&garbled, "{ \"system\": ").unwrap();
    assert_eq!(code(&pskf(&["analyze", garbled.to_str().unwrap()], &[])), 1);
}

#[test]
fn nested_output_directory_is_created() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a").join("b").join("c");
    let mut c = scalar_config(0.6, &out);
    c["trials"] = json!(5);
    c["output"]["full_matrices"] = json!(true);
    let cfg = write(tmp.path(), "c.json", &c);
    assert_eq!(code(&pskf(&["simulate", cfg.to_str().unwrap()], &[])), 0);
    let m = read_json(&out.join("matrices.json"));
    assert_eq!(m["mean_p"].as_array().unwrap().len(), 40);
    assert_eq!(m["empirical_cov"][0], json!([[m["empirical_cov"][0][0][0]]]));
}

#[test]
fn truncated_trials_exit_three_with_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let mut c = scalar_config(0.6, &out);
    c["system"]["A"] = json!([[10.0]]);
    c["scheduler"]["beta"] = json!(0.01);
    c["scheduler"]["thresholds"] = json!([{"eta": 30.0}, {"eta": 30.0}]);
    c["trials"] = json!(20);
    let cfg = write(tmp.path(), "c.json", &c);
    let o = pskf(&["simulate", cfg.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 3);
    let s = read_json(&out.join("summary.json"));
    assert_eq!(s["truncated"], true);
    assert!(s["truncated_trials"].as_u64().unwrap() > 0);
    assert_eq!(csv_rows(&out.join("summary.csv")).len(), 40);
}

#[test]
fn correlated_noise_runs_whitened() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let mut c = scalar_config(0.6, &out);
    c["system"]["R"] = json!([[1.0, 0.4], [0.4, 1.0]]);
    c["trials"] = json!(10);
    let cfg = write(tmp.path(), "c.json", &c);
    let o = pskf(&["simulate", cfg.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(&out.join("summary.json"))["whitened"], true);
    let eff = read_json(&out.join("effective_config.json"));
    assert_eq!(eff["system"]["R"], json!([[1.0, 0.4], [0.4, 1.0]]));
}

#[test]
fn analyze_scalar_example() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = write(tmp.path(), "c.json", &scalar_config(0.6, &out));
    assert_eq!(code(&pskf(&["analyze", cfg.to_str().unwrap()], &[])), 0);
    let r = read_json(&out.join("analysis.json"));
    assert_eq!(r["necessary"]["ok"], true);
    assert!((r["necessary"]["lhs"].as_f64().unwrap() - 0.16).abs() < 1e-15);
    assert!((r["necessary"]["rhs"].as_f64().unwrap() - 1.0 / 1.44).abs() < 1e-15);
    assert_eq!(r["sufficient"]["ok"], true);
    assert!(r["sufficient"]["margin"].as_f64().unwrap() > 0.0);
    assert_eq!(r["sufficient"]["gains"].as_array().unwrap().len(), 2);
    assert!(r["fixed_point"][0][0].as_f64().unwrap().is_finite());
    assert_eq!(r["status"], "converged");
}

#[test]
fn analyze_unstable_example_still_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let mut c = scalar_config(0.05, &out);
    c["scheduler"]["beta"] = json!(0.01);
    let cfg = write(tmp.path(), "c.json", &c);
    assert_eq!(code(&pskf(&["analyze", cfg.to_str().unwrap()], &[])), 0);
    let r = read_json(&out.join("analysis.json"));
    assert_eq!(r["necessary"]["ok"], false);
    assert!((r["necessary"]["lhs"].as_f64().unwrap() - 0.9025).abs() < 1e-12);
    assert_eq!(r["status"], "diverged");
    assert_eq!(r["fixed_point"], Value::Null);
    assert_eq!(r["sufficient"]["ok"], false);
}

#[test]
fn analyze_stable_system() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let mut c = scalar_config(0.6, &out);
    c["system"]["A"] = json!([[0.5]]);
    c["scheduler"]["thresholds"] = json!([{"eta": 5.0}, {"eta": 5.0}]);
    c["analysis"] = json!({"sufficient": false});
    let cfg = write(tmp.path(), "c.json", &c);
    assert_eq!(code(&pskf(&["analyze", cfg.to_str().unwrap()], &[])), 0);
    let r = read_json(&out.join("analysis.json"));
    assert_eq!(r["necessary"]["ok"], true);
    assert_eq!(r["sufficient"], Value::Null);
}

#[test]
fn solve_threshold() {
    let o = pskf(&["solve-threshold", "--beta", "0.5", "--lambda", "0.9006259784506"], &[]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["eta"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((v["mu"].as_f64().unwrap() - 0.317310507862914).abs() < 1e-9);

    let o = pskf(&["solve-threshold", "--beta", "0.5", "--lambda", "0.4"], &[]);
    assert_eq!(code(&o), 2);
    assert!(o.stdout.is_empty());
}

#[test]
fn usage_errors() {
    assert_eq!(code(&pskf(&["frobnicate"], &[])), 2);
    assert_eq!(code(&pskf(&["solve-threshold", "--beta", "x", "--lambda", "0.5"], &[])), 2);
    let o = pskf(&["--help"], &[]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("simulate"));
}

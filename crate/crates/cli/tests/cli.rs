use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sde-bridge"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn problems(out: &Output) -> Vec<String> {
    stderr_json(out)["error"]["problems"]
        .as_array()
        .expect("config error lists problems")
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect()
}

const OU_ARGS: &[&str] = &["--model", "linear1d", "--alpha=0.5,-1.0", "--beta=0.4,0.0", "--x0=0.5"];

#[test]
fn empty_argv_prints_usage_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage:"));
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--n", "10", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn q1_out_of_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["estimate", "-i", "missing.csv", "--delta", "0.1", "--q1", "1.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(problems(&out).iter().any(|p| p.contains("q1 must lie in (0,1]")));
}

#[test]
fn delta1_must_exceed_one_minus_q1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["estimate", "-i", "missing.csv", "--delta", "0.1", "--delta1", "0.05", "--q1", "0.9"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(problems(&out).iter().any(|p| p.contains("delta1 > 1 - q1")), "{:?}", problems(&out));
}

#[test]
fn all_flag_problems_are_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    let out =
        run(&["estimate", "-i", "x.csv", "--delta=-1", "--q1", "1.5", "--q2", "0", "--model", "cubic"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let p = problems(&out);
    assert!(p.len() >= 4, "{p:?}");
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["estimate", "-i", "missing.csv", "--delta", "0.1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"]["kind"], "io");
}

#[test]
fn malformed_csv_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "t,X1\n0,1\n1,\n2,3\n").unwrap();
    let out = run(&["estimate", "--model", "linear1d", "-i", "bad.csv", "--delta", "1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "parse");
    assert!(err["error"]["message"].as_str().unwrap().contains("line 3"));
}

#[test]
fn simulate_then_estimate_qmle() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--n", "400", "--delta", "0.05", "--seed", "3", "-o", "path.csv"];
    args.extend_from_slice(OU_ARGS);
    let out = run(&args, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("path.csv")).unwrap();
    assert_eq!(csv.lines().count(), 402);
    assert!(csv.starts_with("t,X1\n"));
    let side: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("path.csv.json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 3);
    assert_eq!(side["config"]["n"], 400);

    let out = run(&["estimate", "--model", "linear1d", "-i", "path.csv", "--delta", "0.05"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let fit: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(fit["theta_hat"]["alpha"].as_array().unwrap().len(), 2);
    assert_eq!(fit["theta_hat"]["beta"].as_array().unwrap().len(), 2);
    assert!(fit["objective"].is_number());
    assert_eq!(fit["curvature"].as_array().unwrap().len(), 4);
    assert!(fit["converged"].is_boolean());
    let b0 = fit["theta_hat"]["beta"][0].as_f64().unwrap();
    assert!((b0.abs() - 0.4).abs() < 0.1, "beta0 = {b0}");
}

#[test]
fn estimate_bridge_reports_active_sets() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--n", "400", "--delta", "0.05", "-o", "path.csv"];
    args.extend_from_slice(OU_ARGS);
    assert_eq!(run(&args, dir.path()).status.code(), Some(0));
    for method in ["bridge", "lasso", "disjoint"] {
        let out = run(
            &[
                "estimate", "--model", "linear1d", "-i", "path.csv", "--delta", "0.05", "--method", method, "-o",
                "fit.json",
            ],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let fit: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
        assert!(fit["active_alpha"].is_array());
        assert!(fit["active_beta"].is_array());
        let active = fit["active_beta"].as_array().unwrap();
        assert!(active.contains(&Value::from(0)), "{method}: {fit}");
        assert!(dir.path().join("fit.json.json").exists());
    }
}

#[test]
fn tune_emits_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--n", "300", "--delta", "0.05", "-o", "path.csv"];
    args.extend_from_slice(OU_ARGS);
    assert_eq!(run(&args, dir.path()).status.code(), Some(0));
    let out = run(
        &["tune", "--model", "linear1d", "-i", "path.csv", "--delta", "0.05", "--max-iter", "5", "--lags", "5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let res: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!res["trace"].as_array().unwrap().is_empty());
    assert!(res["psi_star"]["q1"].as_f64().unwrap() <= 1.0);
    assert!(res["score"].is_number());

    let out =
        run(&["tune", "--model", "linear1d", "-i", "path.csv", "--delta", "0.05", "--psi0", "0.9,0.9,2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

const TINY_MC: &str = r#"
model = "linear1d"
n = 200
N = 2
delta_rule = "fixed"
delta = 0.05
x0 = [0.5]
methods = ["qmle", "bridge", "lasso"]

[truth]
alpha = [0.5, -1.0]
beta = [0.4, 0.0]
"#;

fn mc_hashes(dir: &Path, out_dir: &str, threads: &str) -> Vec<(String, String)> {
    let out = run(&["mc", "tiny.toml", "--threads", threads, "--output-dir", out_dir], dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    report["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["file"].as_str().unwrap().to_string(), f["hash"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn tiny_mc_writes_one_row_per_method_and_parameter() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY_MC).unwrap();
    let hashes = mc_hashes(dir.path(), "a", "1");
    let summary = std::fs::read_to_string(dir.path().join("a/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3 * 4);
    let selection = std::fs::read_to_string(dir.path().join("a/selection.csv")).unwrap();
    assert_eq!(selection.lines().count(), 1 + 3);
    let run_json: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/run.json")).unwrap()).unwrap();
    assert_eq!(run_json["config"]["mc"]["replicates"], 2);
    assert_eq!(run_json["files"]["summary.csv"], Value::from(hashes[0].1.clone()));

    let again = mc_hashes(dir.path(), "b", "2");
    assert_eq!(hashes, again);
}

#[test]
fn unknown_config_keys_are_all_listed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "n = 10\nreplicas = 3\n[psi0]\nlamda0 = 1\n").unwrap();
    let out = run(&["mc", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(problems(&out), vec!["unknown key 'psi0.lamda0'", "unknown key 'replicas'"]);
}

#[test]
fn config_range_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "N = 0\nthreads = 0\n[psi0]\nq1 = 0.9\ndelta1 = 0.05\n").unwrap();
    let out = run(&["mc", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let p = problems(&out);
    assert!(p.iter().any(|m| m.contains("replicates")), "{p:?}");
    assert!(p.iter().any(|m| m.contains("threads")), "{p:?}");
    assert!(p.iter().any(|m| m.contains("delta1 > 1 - q1")), "{p:?}");
}

#[test]
fn predict_writes_bands_per_series() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--n", "299", "--delta", "0.05", "-o", "series.csv"];
    args.extend_from_slice(OU_ARGS);
    assert_eq!(run(&args, dir.path()).status.code(), Some(0));
    std::fs::write(
        dir.path().join("predict.toml"),
        "model = \"linear1d\"\ndata = \"series.csv\"\ndelta = 0.05\nn_train = 250\nN = 50\n",
    )
    .unwrap();
    let out = run(&["predict", "predict.toml", "--output-dir", "pred"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["n_test"], 50);
    let mse = std::fs::read_to_string(dir.path().join("pred/predict.csv")).unwrap();
    assert_eq!(mse.lines().count(), 1 + 3);
    let bands = std::fs::read_to_string(dir.path().join("pred/bands_X1.csv")).unwrap();
    assert_eq!(bands.lines().count(), 1 + 3 * 50);
    assert!(dir.path().join("pred/run.json").exists());
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_optirate"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "expected one diagnostic line, got {text:?}");
    serde_json::from_str(lines[0]).expect("diagnostic is JSON")
}

#[test]
fn bound_matrix_example_prints_two() {
    let out = run(&[
        "bound",
        "--op",
        "norm_bound_matrix",
        "--args",
        r#"{"r":1,"xstar_fro":1,"n":100,"sigma_sq":1,"d1":10,"d2":100,"eps_hat":0}"#,
    ]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "2.0");
}

#[test]
fn bound_errors_map_to_exit_codes() {
    let out = run(&["bound", "--op", "norm_bound_linear", "--args", r#"{"xi_norm_sq":1,"trace":1,"epshat":0}"#]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_line(&out)["error"], "config");

    let out = run(&["bound", "--op", "optimistic_rhs", "--args", r#"{"train_loss":1,"H":1,"C":1,"n":10,"eps_hat":1.0}"#]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_line(&out)["exit"], 3);

    let out = run(&["bound", "--op", "no_such_op", "--args", "{}"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn misspelled_config_key_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"experiment": "counterexample", "points": [{"n": 400, "d": 2000}], "trails": 50}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["experiment", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let diag = stderr_line(&out);
    assert_eq!(diag["error"], "config");
    assert!(diag["message"].as_str().unwrap().contains("trails"));
    assert!(!out_dir.join("trials.csv").exists());
}

#[test]
fn missing_seed_and_missing_file() {
    let cfg = configs().join("counterexample.json");
    let out = run(&["experiment", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["experiment", "--config", "/nonexistent/cfg.json", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_line(&out)["error"], "io");
}

#[test]
fn counterexample_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("counterexample.json");
    let mut csvs = Vec::new();
    for (i, workers) in ["1", "1", "2"].iter().enumerate() {
        let out_dir = dir.path().join(format!("run{i}"));
        let out = run(&[
            "experiment",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--workers",
            workers,
            "--out",
            out_dir.to_str().unwrap(),
            "--plots",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(fs::read(out_dir.join("trials.csv")).unwrap());
        assert!(out_dir.join("report.json").exists());
        assert!(out_dir.join("plots/moment_gap.svg").exists());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    let head: Vec<&str> = text.lines().take(3).collect();
    assert!(head[0].starts_with("# optirate "));
    assert_eq!(head[1], "# experiment=counterexample seed=7");
    assert!(head[2].starts_with("# config={"));
}

#[test]
fn report_resummarizes_saved_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lin.json");
    fs::write(
        &cfg,
        r#"{"experiment": "benign_linear", "points": [{"n": 20, "covariance": {"kind": "isotropic", "d": 300, "scale": 1.0}}],
            "noise_std": 0.5, "trials": 4, "eps_trials": 100}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["experiment", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plots = dir.path().join("again");
    let out = run(&[
        "report",
        "--input",
        out_dir.join("report.json").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
        "--plots",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("benign_linear seed=3"));
    assert!(plots.join("plots/bound_vs_loss.svg").exists());
    assert_eq!(fs::read(out_dir.join("trials.csv")).unwrap(), fs::read(plots.join("trials.csv")).unwrap());
}

#[test]
fn losscheck_gen_and_fit_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(&["losscheck", "--loss", "phase_retrieval", "--out", d.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("losscheck.json")).unwrap()).unwrap();
    assert_eq!(v["holds"], true);
    assert_eq!(v["artifact"], "optirate");

    let out = run(&["losscheck", "--loss", "cubic"]);
    assert_eq!(out.status.code(), Some(2));

    let model = r#"{"sigma": {"kind": "isotropic", "d": 30, "scale": 1.0}, "W": {"k": 1, "entries": [[0, 0, 1.0]]},
                    "link": {"kind": "magnitude_noise"}, "noise": {"kind": "gaussian", "std": 0.2}}"#;
    let mpath = d.join("model.json");
    fs::write(&mpath, model).unwrap();
    let out = run(&["gen", "--config", mpath.to_str().unwrap(), "--seed", "4", "--n", "12", "--out", d.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.join("samples.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 13);

    let fit = format!(r#"{{"problem": "multi_index", "model": {model}, "n": 8, "solver": "phase_brute"}}"#);
    let fpath = d.join("fit.json");
    fs::write(&fpath, fit).unwrap();
    let out = run(&["fit", "--config", fpath.to_str().unwrap(), "--seed", "4", "--out", d.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sol: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["seed"], 4);
    assert!(sol["solution"]["norm"].as_f64().unwrap() > 0.0);
}

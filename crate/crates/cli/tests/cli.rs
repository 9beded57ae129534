use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
study = "monte-carlo-normality"
replications = 3
n = 30
master_seed = 11

[model]
family = "normal-location"
sigma = 1.0
theta0 = 0.0

[divergence]
gamma = [0.0, 0.5]

[prior]
kind = "normal"
mean = 0.0
sd = 10.0

[mcmc]
steps = 4000
burn_in = 1000
chains = 2
"#;

fn phibayes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phibayes")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn single_run_dir(root: &Path, study: &str) -> std::path::PathBuf {
    let mut dirs: Vec<_> = std::fs::read_dir(root.join(study)).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.pop().unwrap()
}

#[test]
fn version_prints() {
    let out = phibayes(&["version"]);
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("phibayes "));
}

#[test]
fn validate_config_ok_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = phibayes(&["validate-config", "--config", &cfg]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("config_hash"));

    let bad = write_config(dir.path(), &CONFIG.replace("replications = 3", "replications = 0"));
    assert_eq!(phibayes(&["validate-config", "--config", &bad]).status.code(), Some(2));
    assert_eq!(phibayes(&["validate-config", "--config", "/no/such/file.toml"]).status.code(), Some(2));
}

#[test]
fn study_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out_dir = dir.path().join("out");
    let out = phibayes(&["study", "--config", &cfg, "--output", out_dir.to_str().unwrap(), "--jobs", "1", "--gnuplot"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("coverage"));
    let run = single_run_dir(&out_dir, "monte-carlo-normality");
    for f in ["rows.csv", "summary.json", "plot.gp"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let rows = std::fs::read_to_string(run.join("rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 7);
}

#[test]
fn fit_with_overrides_writes_chains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out_dir = dir.path().join("out");
    let out = phibayes(&[
        "fit", "--config", &cfg, "--output", out_dir.to_str().unwrap(), "--gamma", "Hellinger", "--seed", "5", "--quiet",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).is_empty());
    let run = single_run_dir(&out_dir, "single-fit");
    let chains: Vec<_> = std::fs::read_dir(run.join("chains")).unwrap().collect();
    assert_eq!(chains.len(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["master_seed"], 5);
    assert_eq!(summary["fits"][0]["gamma"], 0.5);
}

#[test]
fn bad_gamma_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = phibayes(&["fit", "--config", &cfg, "--gamma", "banana"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn duality_check_reports_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out_dir = dir.path().join("out");
    let out = phibayes(&["duality-check", "--config", &cfg, "--output", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = single_run_dir(&out_dir, "duality-sanity");
    let rows = std::fs::read_to_string(run.join("rows.csv")).unwrap();
    assert!(rows.starts_with("gamma,theta_1,sup_value,divergence,gap,argmax_1,error"));
    assert_eq!(rows.lines().count(), 7);
}

#[test]
fn jobs_env_var_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out_dir = dir.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_phibayes"))
        .args(["study", "--config", &cfg, "--output", out_dir.to_str().unwrap(), "--quiet"])
        .env("PHIBAYES_JOBS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
}

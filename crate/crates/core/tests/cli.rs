use std::path::Path;
use std::process::{Command, Output};

use volfilter::harness::{CheckName, ExperimentConfig};
use volfilter::TimeGrid;

fn small(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        n_paths: 300,
        n_particles: 100,
        export_paths: 4,
        grid: TimeGrid::new(0.0, 1.0, 60).unwrap(),
        output_dir: out.to_path_buf(),
        checks: vec![],
        ..ExperimentConfig::canonical()
    }
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    path
}

fn volfilter(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_volfilter"));
    cmd.args(args).env_remove("VOLFILTER_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn verify_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = small(&out);
    cfg.checks = vec![CheckName::Riccati, CheckName::Degenerate];
    let config = write_config(dir.path(), &cfg);
    let o = volfilter(&["verify", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("PASS riccati") && text.contains("PASS degenerate"));
    assert!(out.join("report.toml").exists());

    let o = volfilter(&["report", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("2 checks, 0 failed"));
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&dir.path().join("out"));
    cfg.coefficient_form = volfilter::dual_value::CoefficientForm::Printed;
    cfg.checks = vec![CheckName::PdeResidual];
    let config = write_config(dir.path(), &cfg);
    let o = volfilter(&["verify", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8(o.stdout).unwrap().contains("FAIL pde_residual"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let text = small(&out).to_toml_string().unwrap();

    let bad_rho = dir.path().join("rho.toml");
    std::fs::write(&bad_rho, text.replacen("rho = -0.5", "rho = 1.0", 1)).unwrap();
    let o = volfilter(&["simulate", "--config", bad_rho.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8(o.stderr).unwrap().contains("rho"));
    assert!(!out.exists(), "nothing may run before validation");

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, format!("colour = \"red\"\n{text}")).unwrap();
    assert_eq!(code(&volfilter(&["simulate", "--config", unknown.to_str().unwrap()], &[])), 2);

    assert_eq!(code(&volfilter(&["simulate"], &[])), 2);
    assert_eq!(code(&volfilter(&["frobnicate"], &[])), 2);
    let good = write_config(dir.path(), &small(&out));
    let o = volfilter(&["simulate", "--config", good.to_str().unwrap()], &[("VOLFILTER_THREADS", "zero")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn stage_commands_write_declared_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), &small(&out));
    let c = config.to_str().unwrap();
    for (cmd, file, header) in [
        ("simulate", "paths.csv", "path_id,t,S,V,mu,beta,dW1,dW2,dW3,dW4"),
        ("filter", "filter_kalman.csv", "t,mu_bar,beta_bar,theta11,theta12,theta22,dWbar1,dWbar2"),
        ("value", "value_coeffs.csv", "t,A_tilde,B_tilde,A_bar,B_bar,C_bar"),
        ("optimize", "terminal_wealth.csv", "path_id,R_T,U"),
    ] {
        let o = volfilter(&[cmd, "--config", c], &[]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(out.join(file)).unwrap();
        assert_eq!(text.lines().next().unwrap(), header, "{cmd}");
    }
}

#[test]
fn seed_override_and_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small(&dir.path().join("unused")));
    let c = config.to_str().unwrap();
    let run = |sub: &str, seed: &str, threads: &str| {
        let out = dir.path().join(sub);
        let o = volfilter(&["optimize", "--config", c, "--seed", seed, "--out", out.to_str().unwrap()], &[("VOLFILTER_THREADS", threads)]);
        assert_eq!(code(&o), 0);
        std::fs::read(out.join("terminal_wealth.csv")).unwrap()
    };
    let a = run("a", "5", "1");
    let b = run("b", "5", "3");
    let c2 = run("c", "6", "1");
    assert_eq!(a, b);
    assert_ne!(a, c2);
}

//! Config-driven orchestration: simulate → filter → value → optimize →
//! verify, with CSV/SVG artifacts and a TOML verification report.

mod checks;
mod report;
mod svg;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dual_value::{
    phi_eval, phi_log_logou, solve_value_coeffs_logou, write_value_coeffs_csv, yfield_assemble, CoefficientForm,
    ThetaMode, ValueCoeffs, YField,
};
use crate::error::{Error, Result};
use crate::filtering::{
    filter_prior, kalman_bucy_run, particle_ks_run, riccati_theta, signal_dynamics, write_filter_csv, FilterOutput,
    ParticleOptions,
};
use crate::grid::TimeGrid;
use crate::models::{validate_params, ModelKind, ModelParams, UtilitySpec};
use crate::portfolio::{
    mc_expected_utility, policy_log, policy_power, primal_value_closed, simulate_terminal_wealth,
    wealth_on_path, write_terminal_wealth_csv, McSetup, Policy, DEFAULT_PI_MAX,
};
use crate::rng::derive_seed;
use crate::sde_sim::{observed_brownians, simulate_paths_with, write_paths_csv, MarketPath, SimOptions};

pub use checks::{run_check, CheckName, CheckResult};
pub use report::VerificationReport;

pub const THREADS_ENV: &str = "VOLFILTER_THREADS";
pub const REPORT_FILE: &str = "report.toml";

fn default_n_particles() -> usize {
    1000
}
fn default_pi_max() -> f64 {
    DEFAULT_PI_MAX
}
fn default_x0() -> f64 {
    1.0
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_export_paths() -> usize {
    10
}
fn default_utility() -> UtilitySpec {
    UtilitySpec::Log
}

/// One file fully determines a run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_paths: usize,
    #[serde(default = "default_n_particles")]
    pub n_particles: usize,
    #[serde(default)]
    pub theta_mode: ThetaMode,
    #[serde(default)]
    pub coefficient_form: CoefficientForm,
    #[serde(default = "default_pi_max")]
    pub pi_max: f64,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub checks: Vec<CheckName>,
    /// Number of paths written to `paths.csv` and drawn in the wealth fan.
    #[serde(default = "default_export_paths")]
    pub export_paths: usize,
    #[serde(default)]
    pub plots: bool,
    pub model: ModelParams,
    pub grid: TimeGrid,
    #[serde(default = "default_utility")]
    pub utility: UtilitySpec,
}

impl ExperimentConfig {
    /// Canonical Log-OU market, power utility `p = 0.5`, one year in 500 steps.
    pub fn canonical() -> Self {
        Self {
            seed: 2024,
            n_paths: 100_000,
            n_particles: 5000,
            theta_mode: ThetaMode::Stationary,
            coefficient_form: CoefficientForm::Consistent,
            pi_max: DEFAULT_PI_MAX,
            x0: 1.0,
            output_dir: default_output_dir(),
            checks: CheckName::ALL.to_vec(),
            export_paths: default_export_paths(),
            plots: false,
            model: ModelParams::canonical_log_ou(),
            grid: TimeGrid { t0: 0.0, horizon: 1.0, n_steps: 500 },
            utility: UtilitySpec::Power { p: 0.5 },
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        validate_params(self.model)?;
        self.grid.validate()?;
        self.utility.validate()?;
        if self.n_paths == 0 {
            return Err(Error::validation("n_paths", "must be at least 1"));
        }
        if self.n_particles == 0 {
            return Err(Error::validation("n_particles", "must be at least 1"));
        }
        if !(self.pi_max > 0.0) {
            return Err(Error::validation("pi_max", "must be positive"));
        }
        if !(self.x0 > 0.0) {
            return Err(Error::validation("x0", "must be positive"));
        }
        for (i, c) in self.checks.iter().enumerate() {
            if self.checks[..i].contains(c) {
                return Err(Error::Config(format!("check `{}` listed twice", c.as_str())));
            }
        }
        Ok(())
    }

    /// Power exponent used by the power-utility checks; log configs use 0.5.
    pub fn power_p(&self) -> f64 {
        match self.utility {
            UtilitySpec::Power { p } => p,
            UtilitySpec::Log => 0.5,
        }
    }

    fn mc_setup(&self) -> McSetup {
        McSetup {
            params: self.model,
            grid: self.grid,
            n_paths: self.n_paths,
            seed: self.seed,
            x0: self.x0,
            pi_max: self.pi_max,
        }
    }
}

/// Worker pool sized by `VOLFILTER_THREADS` (all cores when unset).
/// Results never depend on the pool size.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={s:?} is not a positive integer")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

fn prepare_output_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("output_dir {}: {e}", dir.display())))?;
    let probe = dir.join(".write_probe");
    File::create(&probe).map_err(|e| Error::Config(format!("output_dir {} not writable: {e}", dir.display())))?;
    std::fs::remove_file(probe)?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let f = File::create(&path)?;
    Ok((path, BufWriter::new(f)))
}

/// Figures from the pipeline stages, collected into the report summary.
pub type Summary = BTreeMap<String, f64>;

/// `Y`-field for a covariance mode: `Θ∞` or the Riccati path on the config grid.
pub fn config_field(cfg: &ExperimentConfig, mode: ThetaMode) -> Result<YField> {
    match mode {
        ThetaMode::Stationary => YField::stationary(&cfg.model),
        ThetaMode::TimeVarying => {
            let dyn_ = signal_dynamics(&cfg.model)?;
            let theta = riccati_theta(&dyn_, &filter_prior(&cfg.model)?.cov, &cfg.grid)?;
            yfield_assemble(&cfg.model, &dyn_, &theta, mode)
        }
    }
}

fn exported_paths(cfg: &ExperimentConfig) -> Result<Vec<MarketPath>> {
    let n = cfg.export_paths.min(cfg.n_paths).max(1);
    Ok(simulate_paths_with(&cfg.model, &cfg.grid, n, cfg.seed, SimOptions::default())?.paths)
}

/// Stage 1: `paths.csv` with the first `export_paths` paths.
pub fn stage_simulate(cfg: &ExperimentConfig, summary: &mut Summary) -> Result<Vec<PathBuf>> {
    let paths = exported_paths(cfg)?;
    let (file, w) = create(&cfg.output_dir, "paths.csv")?;
    write_paths_csv(&paths, w)?;
    summary.insert("simulate.exported_paths".into(), paths.len() as f64);
    summary.insert("simulate.mean_terminal_s".into(), crate::stats::mean(&paths.iter().map(|p| p.terminal_s()).collect::<Vec<_>>()));
    Ok(vec![file])
}

/// Stage 2: exact and particle filters on path 0.
pub fn stage_filter(cfg: &ExperimentConfig, summary: &mut Summary) -> Result<Vec<PathBuf>> {
    let path = &exported_paths(cfg)?[0];
    let dyn_ = signal_dynamics(&cfg.model)?;
    let prior = filter_prior(&cfg.model)?;
    let (o1, o2) = observed_brownians(path, &cfg.model)?;
    let kb = kalman_bucy_run(&dyn_, &o1, &o2, &cfg.grid, &prior)?;
    let opts = ParticleOptions::new(cfg.n_particles, derive_seed(cfg.seed, 1));
    let (pf, cloud) = particle_ks_run(&dyn_, &o1, &o2, &cfg.grid, &prior, &opts)?;
    let mut files = Vec::new();
    let (f, w) = create(&cfg.output_dir, "filter_kalman.csv")?;
    write_filter_csv(&kb, w)?;
    files.push(f);
    let (f, w) = create(&cfg.output_dir, "filter_particle.csv")?;
    write_filter_csv(&pf, w)?;
    files.push(f);
    let n = cfg.grid.n_steps;
    summary.insert("filter.kalman_mu_bar_T".into(), kb.mu_bar[n]);
    summary.insert("filter.particle_mu_bar_T".into(), pf.mu_bar[n]);
    summary.insert("filter.particle_ess_T".into(), cloud.ess);
    summary.insert("filter.theta11_T".into(), kb.theta.last()[(0, 0)]);
    if cfg.plots {
        files.push(plot_filter(cfg, path, &kb, &pf)?);
    }
    Ok(files)
}

fn plot_filter(cfg: &ExperimentConfig, path: &MarketPath, kb: &FilterOutput, pf: &FilterOutput) -> Result<PathBuf> {
    let t = cfg.grid.times();
    let series = |ys: &[f64]| t.iter().copied().zip(ys.iter().copied()).collect::<Vec<_>>();
    let file = cfg.output_dir.join("filter.svg");
    svg::line_chart(
        "drift premium: true vs filtered",
        &[
            svg::Series { label: "mu (true)".into(), color: "#444444", points: series(&path.mu) },
            svg::Series { label: "Kalman-Bucy".into(), color: "#1f77b4", points: series(&kb.mu_bar) },
            svg::Series { label: "particle".into(), color: "#d62728", points: series(&pf.mu_bar) },
        ],
        &file,
    )?;
    Ok(file)
}

/// Value coefficients and `Φ(0, Y₀)` for the configured utility (Log-OU only).
pub struct ValueStage {
    pub field: YField,
    pub coeffs: Option<ValueCoeffs>,
    pub phi0: f64,
}

pub fn solve_value(cfg: &ExperimentConfig) -> Result<ValueStage> {
    let field = config_field(cfg, cfg.theta_mode)?;
    let y0 = (cfg.model.v0, cfg.model.m0);
    match cfg.utility {
        UtilitySpec::Log => {
            let phi0 = phi_log_logou(&field, cfg.grid.horizon, cfg.grid.t0, y0)?;
            Ok(ValueStage { field, coeffs: None, phi0 })
        }
        UtilitySpec::Power { p } => {
            let coeffs = solve_value_coeffs_logou(&field, p, &cfg.grid, cfg.coefficient_form)?;
            let (phi0, _) = phi_eval(&coeffs, cfg.grid.t0, y0.0, y0.1)?;
            Ok(ValueStage { field, coeffs: Some(coeffs), phi0 })
        }
    }
}

/// Stage 3: `value_coeffs.csv` (power utility) and the closed-form value.
pub fn stage_value(cfg: &ExperimentConfig, summary: &mut Summary) -> Result<Vec<PathBuf>> {
    let v = solve_value(cfg)?;
    summary.insert("value.phi0".into(), v.phi0);
    summary.insert("value.primal_closed".into(), primal_value_closed(cfg.x0, &cfg.utility, v.phi0));
    let mut files = Vec::new();
    if let Some(c) = &v.coeffs {
        let (f, w) = create(&cfg.output_dir, "value_coeffs.csv")?;
        write_value_coeffs_csv(c, w)?;
        files.push(f);
    }
    Ok(files)
}

fn config_policy(cfg: &ExperimentConfig, value: Option<&ValueStage>) -> Result<Policy> {
    match (cfg.utility, value) {
        (UtilitySpec::Log, _) => Ok(policy_log(&cfg.model)),
        (UtilitySpec::Power { .. }, Some(ValueStage { coeffs: Some(c), field, .. })) => Ok(policy_power(c, field)),
        (UtilitySpec::Power { .. }, _) => Err(Error::Kind(format!("power policy needs Log-OU, got {}", cfg.model.kind))),
    }
}

/// Stage 4: streaming Monte Carlo of the configured policy,
/// `terminal_wealth.csv` and the closed-form comparison.
pub fn stage_optimize(cfg: &ExperimentConfig, summary: &mut Summary) -> Result<Vec<PathBuf>> {
    let value = if cfg.model.kind == ModelKind::LogOU { Some(solve_value(cfg)?) } else { None };
    let policy = config_policy(cfg, value.as_ref())?;
    let tw = simulate_terminal_wealth(&cfg.mc_setup(), std::slice::from_ref(&policy))?;
    let mc = mc_expected_utility(&tw.terminal[0], &cfg.utility, cfg.seed)?;
    summary.insert("optimize.mc_estimate".into(), mc.estimate);
    summary.insert("optimize.mc_stderr".into(), mc.stderr);
    summary.insert("optimize.clipped_steps".into(), tw.clipped[0] as f64);
    if let Some(v) = &value {
        let closed = primal_value_closed(cfg.x0, &cfg.utility, v.phi0);
        summary.insert("optimize.primal_closed".into(), closed);
        summary.insert("optimize.gap_z".into(), mc.z_score(closed));
    }
    let mut files = Vec::new();
    let (f, w) = create(&cfg.output_dir, "terminal_wealth.csv")?;
    write_terminal_wealth_csv(&tw.terminal[0], &cfg.utility, w)?;
    files.push(f);
    if cfg.plots {
        files.push(plot_wealth_fan(cfg, &policy)?);
    }
    Ok(files)
}

fn plot_wealth_fan(cfg: &ExperimentConfig, policy: &Policy) -> Result<PathBuf> {
    let dyn_ = signal_dynamics(&cfg.model)?;
    let prior = filter_prior(&cfg.model)?;
    let t = cfg.grid.times();
    let mut series = Vec::new();
    for path in exported_paths(cfg)? {
        let (o1, o2) = observed_brownians(&path, &cfg.model)?;
        let f = kalman_bucy_run(&dyn_, &o1, &o2, &cfg.grid, &prior)?;
        let w = wealth_on_path(&path, &f, policy, cfg.x0, cfg.pi_max)?;
        series.push(svg::Series {
            label: format!("path {}", path.path_id),
            color: svg::PALETTE[path.path_id % svg::PALETTE.len()],
            points: t.iter().copied().zip(w.r).collect(),
        });
    }
    let file = cfg.output_dir.join("wealth_fan.svg");
    svg::line_chart("wealth under the optimal policy", &series, &file)?;
    Ok(file)
}

/// Run every stage the model supports, then the configured checks, and
/// write `report.toml`. Work runs on the [`worker_pool`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(VerificationReport, Vec<PathBuf>)> {
    cfg.validate()?;
    prepare_output_dir(&cfg.output_dir)?;
    worker_pool()?.install(|| {
        let mut summary = Summary::new();
        let mut files = stage_simulate(cfg, &mut summary).map_err(|e| e.in_stage("simulate"))?;
        if cfg.model.kind.is_filterable() {
            files.extend(stage_filter(cfg, &mut summary).map_err(|e| e.in_stage("filter"))?);
        }
        if cfg.model.kind == ModelKind::LogOU {
            files.extend(stage_value(cfg, &mut summary).map_err(|e| e.in_stage("value"))?);
        }
        if cfg.model.kind.is_filterable() && (cfg.model.kind == ModelKind::LogOU || cfg.utility == UtilitySpec::Log) {
            files.extend(stage_optimize(cfg, &mut summary).map_err(|e| e.in_stage("optimize"))?);
        }
        let report = run_checks(cfg, summary)?;
        files.push(report.write(&cfg.output_dir)?);
        Ok((report, files))
    })
}

/// Run the configured checks only, in config order.
pub fn run_checks(cfg: &ExperimentConfig, summary: Summary) -> Result<VerificationReport> {
    let mut checks = Vec::with_capacity(cfg.checks.len());
    for &name in &cfg.checks {
        checks.push(run_check(name, cfg).map_err(|e| e.in_stage(name.as_str()))?);
    }
    Ok(VerificationReport { seed: cfg.seed, checks, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            n_paths: 200,
            n_particles: 100,
            checks: vec![],
            export_paths: 3,
            output_dir: dir.to_path_buf(),
            grid: TimeGrid::new(0.0, 1.0, 50).unwrap(),
            ..ExperimentConfig::canonical()
        }
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let cfg = ExperimentConfig::canonical();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        let bad = text.replacen("seed = 2024", "seed = 2024\nsede = 1", 1);
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Config(_))));
        let bad_model = text.replacen("rho = -0.5", "rho = -0.5\nrhoo = 0.1", 1);
        assert!(ExperimentConfig::from_toml_str(&bad_model).is_err());
        let bad_check = text.replacen("checks = [", "checks = [\"nope\", ", 1);
        assert!(ExperimentConfig::from_toml_str(&bad_check).is_err());
    }

    #[test]
    fn rho_one_is_rejected_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(&dir.path().join("never"));
        cfg.model.rho = 1.0;
        let err = run_experiment(&cfg).unwrap_err();
        assert!(matches!(err, Error::Validation { field: "rho", .. }));
        assert!(err.is_usage());
        assert!(!dir.path().join("never").exists());
    }

    #[test]
    fn empty_checks_pass_and_write_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let (report, files) = run_experiment(&cfg).unwrap();
        assert!(report.checks.is_empty());
        assert_eq!(report.exit_code(), 0);
        for name in ["paths.csv", "filter_kalman.csv", "filter_particle.csv", "value_coeffs.csv", "terminal_wealth.csv", REPORT_FILE] {
            assert!(files.contains(&dir.path().join(name)), "{name} missing");
        }
        let header = std::fs::read_to_string(dir.path().join("terminal_wealth.csv")).unwrap();
        assert!(header.starts_with("path_id,R_T,U\n"));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut cfg = small(a.path());
        cfg.plots = true;
        run_experiment(&cfg).unwrap();
        cfg.output_dir = b.path().to_path_buf();
        run_experiment(&cfg).unwrap();
        for name in ["paths.csv", "filter_particle.csv", "terminal_wealth.csv", "value_coeffs.csv", "filter.svg", "wealth_fan.svg"] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(x, y, "{name}");
        }
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.model = ModelParams { kind: ModelKind::Heston, sigma_v: 0.1, lambda_v: 3.0, theta: 0.04, v0: 0.04, ..cfg.model };
        cfg.checks = vec![CheckName::DualityGapLog];
        match run_experiment(&cfg).unwrap_err() {
            Error::Stage { stage, source } => {
                assert_eq!(stage, "duality_gap_log");
                assert!(matches!(*source, Error::Kind(_)));
            }
            e => panic!("unexpected {e:?}"),
        }
    }
}

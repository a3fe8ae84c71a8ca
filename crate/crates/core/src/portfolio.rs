//! Optimal log/power policies, wealth simulation and Monte Carlo utility.

use std::io::Write;
use std::sync::Arc;

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::dual_value::{phi_eval, CoefficientForm, ValueCoeffs, YField};
use crate::error::{Error, Result};
use crate::filtering::{filter_prior, kalman_bucy_run_with, riccati_theta, signal_dynamics, FilterOutput, RiccatiPath, SignalDynamics};
use crate::grid::TimeGrid;
use crate::models::{model_coefficients, ModelParams, UtilitySpec};
use crate::sde_sim::{observed_brownians, simulate_path, MarketPath, PathSet, SimOptions};
use crate::stats::MCReport;

pub const DEFAULT_PI_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    Shift(f64),
    Scale(f64),
}

#[derive(Debug, Clone)]
pub enum PolicyRule {
    /// `π = m/g(v)`.
    Log,
    /// `π = m/((1−p)g) − K₁ᵀDΦ/g`, or the printed variant.
    Power { coeffs: Arc<ValueCoeffs>, field: Arc<YField> },
    Constant(f64),
    Perturbed { base: Box<Policy>, delta: Perturbation },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ClosedFormLog,
    ClosedFormPower,
    Constant,
    Perturbed,
}

/// Fraction of wealth in the risky asset as a function of `(t, V, μ̄)`.
#[derive(Debug, Clone)]
pub struct Policy {
    pub utility: UtilitySpec,
    pub params: ModelParams,
    pub rule: PolicyRule,
}

impl Policy {
    pub fn provenance(&self) -> Provenance {
        match self.rule {
            PolicyRule::Log => Provenance::ClosedFormLog,
            PolicyRule::Power { .. } => Provenance::ClosedFormPower,
            PolicyRule::Constant(_) => Provenance::Constant,
            PolicyRule::Perturbed { .. } => Provenance::Perturbed,
        }
    }

    pub fn fraction(&self, t: f64, v: f64, m: f64) -> Result<f64> {
        match &self.rule {
            PolicyRule::Log => {
                let (g, _) = model_coefficients(&self.params, v)?;
                Ok(m / g)
            }
            PolicyRule::Power { coeffs, field } => {
                let (g, _) = model_coefficients(&self.params, v)?;
                let p = coeffs.p;
                match coeffs.form {
                    CoefficientForm::Consistent => {
                        let (_, d_phi) = phi_eval(coeffs, t, v, m)?;
                        Ok(m / ((1.0 - p) * g) - field.k1(t)?.dot(&d_phi) / g)
                    }
                    CoefficientForm::Printed => {
                        let ([at, _, ab, bb, _], _) = coeffs.at(t)?;
                        let tau = coeffs.horizon() - t;
                        let th = field.theta_at(t)?;
                        let prm = &self.params;
                        Ok(m / ((p - 1.0) * g) - prm.rho * prm.sigma_v * (at + tau) / g
                            + th[(0, 0)] * (2.0 * ab * m + bb) / g)
                    }
                }
            }
            PolicyRule::Constant(c) => Ok(*c),
            PolicyRule::Perturbed { base, delta } => {
                let b = base.fraction(t, v, m)?;
                Ok(match *delta {
                    Perturbation::Shift(d) => b + d,
                    Perturbation::Scale(s) => b * s,
                })
            }
        }
    }

    pub fn perturbed(&self, delta: Perturbation) -> Policy {
        Policy { rule: PolicyRule::Perturbed { base: Box::new(self.clone()), delta }, ..self.clone() }
    }

    pub fn constant(utility: UtilitySpec, params: &ModelParams, pi: f64) -> Policy {
        Policy { utility, params: *params, rule: PolicyRule::Constant(pi) }
    }
}

/// Certainty-equivalent log policy `π = μ̄/g(V)`.
pub fn policy_log(params: &ModelParams) -> Policy {
    Policy { utility: UtilitySpec::Log, params: *params, rule: PolicyRule::Log }
}

/// Power policy from solved value coefficients.
pub fn policy_power(coeffs: &ValueCoeffs, field: &YField) -> Policy {
    Policy {
        utility: UtilitySpec::Power { p: coeffs.p },
        params: field.params,
        rule: PolicyRule::Power { coeffs: Arc::new(coeffs.clone()), field: Arc::new(field.clone()) },
    }
}

/// Primal control from a dual control through the scalar pairing
/// `K₁ᵀ(K₂ᵀ)⁻¹ = ϑ/Υ`:
/// `π = ψ/((1−p)δ) − (ϑ/Υ)·ν/((1−p)δ)`.
pub fn nu_to_pi(nu: f64, t: f64, y: (f64, f64), p: f64, field: &YField) -> Result<f64> {
    let (v, m) = y;
    let (g, _) = model_coefficients(&field.params, v)?;
    let th = field.theta_at(t)?;
    if th[(0, 1)] == 0.0 {
        return Err(Error::SingularPairing);
    }
    let pairing = th[(0, 0)] / th[(0, 1)];
    Ok((field.psi(v, m) - pairing * nu) / ((1.0 - p) * g))
}

/// Closed-form primal value: `ln x − Φ₀` or `x^p/p·exp(−(1−p)Φ₀)`.
pub fn primal_value_closed(x: f64, utility: &UtilitySpec, phi0: f64) -> f64 {
    match *utility {
        UtilitySpec::Log => x.ln() - phi0,
        UtilitySpec::Power { p } => x.powf(p) / p * (-(1.0 - p) * phi0).exp(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WealthPath {
    pub grid: TimeGrid,
    pub r: Vec<f64>,
    pub pi: Vec<f64>,
    pub clipped: usize,
}

impl WealthPath {
    pub fn terminal(&self) -> f64 {
        self.r[self.grid.n_steps]
    }
}

/// Wealth along one path under `policy`, with `π` read at each step's left
/// endpoint from `(t, V, μ̄)` and clipped to `[−π_max, π_max]`.
/// `Δln R = π μ̃ g Δt − ½π²g²Δt + π g ΔW¹`.
pub fn wealth_on_path(
    path: &MarketPath,
    filter: &FilterOutput,
    policy: &Policy,
    x0: f64,
    pi_max: f64,
) -> Result<WealthPath> {
    let grid = path.grid;
    let n = grid.n_steps;
    if filter.mu_bar.len() != n + 1 || filter.grid.n_steps != n {
        return Err(Error::Dimension(format!("path {} and filter grids differ", path.path_id)));
    }
    if !(x0 > 0.0) {
        return Err(Error::Domain(format!("initial wealth {x0} must be positive")));
    }
    let dt = grid.dt();
    let factor = policy.params.kind.is_factor_form();
    let mut r = Vec::with_capacity(n + 1);
    let mut pis = Vec::with_capacity(n);
    let mut clipped = 0;
    let mut wealth = x0;
    r.push(wealth);
    for i in 0..n {
        let (g, _) = model_coefficients(&policy.params, path.v[i])?;
        let raw = policy.fraction(grid.time(i), path.v[i], filter.mu_bar[i])?;
        let pi = raw.clamp(-pi_max, pi_max);
        clipped += (pi != raw) as usize;
        let excess = if factor { path.mu[i] * g } else { path.mu[i] };
        let dlog = pi * excess * dt - 0.5 * pi * pi * g * g * dt + pi * g * path.dw1[i];
        wealth *= dlog.exp();
        r.push(wealth);
        pis.push(pi);
    }
    Ok(WealthPath { grid, r, pi: pis, clipped })
}

/// Wealth for every path of a set (paths and filters aligned by index).
pub fn wealth_simulate(
    paths: &PathSet,
    filters: &[FilterOutput],
    policy: &Policy,
    x0: f64,
    pi_max: f64,
) -> Result<Vec<WealthPath>> {
    if filters.len() != paths.paths.len() {
        return Err(Error::Dimension(format!("{} paths but {} filters", paths.paths.len(), filters.len())));
    }
    paths
        .paths
        .par_iter()
        .zip(filters.par_iter())
        .map(|(p, f)| wealth_on_path(p, f, policy, x0, pi_max))
        .collect()
}

/// Sample mean of `U(R_T)` with its standard error.
pub fn mc_expected_utility(terminal: &[f64], utility: &UtilitySpec, seed: u64) -> Result<MCReport> {
    if let Some(bad) = terminal.iter().find(|&&r| !(r > 0.0)) {
        return Err(Error::Domain(format!("terminal wealth {bad} is not positive")));
    }
    let u: Vec<f64> = terminal.iter().map(|&r| utility.utility(r)).collect();
    Ok(MCReport::from_samples(&u, seed))
}

/// Monte Carlo experiment description shared by all policies compared on
/// the same random numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSetup {
    pub params: ModelParams,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: f64,
    pub pi_max: f64,
}

/// Terminal wealth of each policy on each path, plus per-policy clip counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalWealth {
    /// `terminal[k][i]`: policy `k`, path `i`.
    pub terminal: Vec<Vec<f64>>,
    pub clipped: Vec<usize>,
}

struct PathJob<'a> {
    setup: &'a McSetup,
    dyn_: SignalDynamics,
    theta: RiccatiPath,
    mean0: Vector2<f64>,
}

impl PathJob<'_> {
    fn run(&self, i: usize, policies: &[Policy]) -> Result<(Vec<f64>, Vec<usize>)> {
        let s = self.setup;
        let path = simulate_path(&s.params, &s.grid, s.seed, i, SimOptions::default())?;
        let (o1, o2) = observed_brownians(&path, &s.params)?;
        let filter = kalman_bucy_run_with(&self.dyn_, &self.theta, &o1, &o2, self.mean0)?;
        let mut wealth = Vec::with_capacity(policies.len());
        let mut clips = Vec::with_capacity(policies.len());
        for pol in policies {
            let w = wealth_on_path(&path, &filter, pol, s.x0, s.pi_max)?;
            wealth.push(w.terminal());
            clips.push(w.clipped);
        }
        Ok((wealth, clips))
    }
}

/// Streaming pipeline: simulate → filter → wealth for every policy, one
/// path at a time, so only terminal wealths are kept. All policies see the
/// same paths (common random numbers).
pub fn simulate_terminal_wealth(setup: &McSetup, policies: &[Policy]) -> Result<TerminalWealth> {
    let dyn_ = signal_dynamics(&setup.params)?;
    let prior = filter_prior(&setup.params)?;
    let theta = riccati_theta(&dyn_, &prior.cov, &setup.grid)?;
    let job = PathJob { setup, dyn_, theta, mean0: prior.mean };
    let rows: Vec<(Vec<f64>, Vec<usize>)> =
        (0..setup.n_paths).into_par_iter().map(|i| job.run(i, policies)).collect::<Result<_>>()?;
    let mut terminal = vec![Vec::with_capacity(setup.n_paths); policies.len()];
    let mut clipped = vec![0; policies.len()];
    for (w, c) in rows {
        for k in 0..policies.len() {
            terminal[k].push(w[k]);
            clipped[k] += c[k];
        }
    }
    Ok(TerminalWealth { terminal, clipped })
}

pub const WEALTH_CSV_HEADER: [&str; 3] = ["path_id", "R_T", "U"];

pub fn write_terminal_wealth_csv<W: Write>(terminal: &[f64], utility: &UtilitySpec, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(WEALTH_CSV_HEADER).map_err(crate::sde_sim::csv_err)?;
    for (i, &r) in terminal.iter().enumerate() {
        w.write_record([i.to_string(), r.to_string(), utility.utility(r).to_string()])
            .map_err(crate::sde_sim::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

//! Euler simulation of the full-information market `(S, V, μ, β)` and
//! recovery of the observation Brownians.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::models::{model_coefficients, vol_drift, ModelKind, ModelParams};
use crate::rng::{substream, Domain, StreamRng};

/// One simulated trajectory. State series have `n_steps + 1` nodes,
/// increment series have `n_steps` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath {
    pub path_id: usize,
    pub grid: TimeGrid,
    pub log_s: Vec<f64>,
    pub v: Vec<f64>,
    pub mu: Vec<f64>,
    pub beta: Vec<f64>,
    pub dw1: Vec<f64>,
    pub dw2: Vec<f64>,
    pub dw3: Vec<f64>,
    pub dw4: Vec<f64>,
    /// Volatility was held at `V₀` (degenerate constant-volatility mode).
    pub frozen_volatility: bool,
}

impl MarketPath {
    pub fn s(&self) -> Vec<f64> {
        self.log_s.iter().map(|x| x.exp()).collect()
    }

    pub fn terminal_s(&self) -> f64 {
        self.log_s[self.grid.n_steps].exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<MarketPath>,
    pub seed: u64,
    pub params: ModelParams,
    pub grid: TimeGrid,
}

/// Degenerate switches used by closed-form checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Hold `V ≡ V₀` (constant-volatility mode).
    pub frozen_volatility: bool,
    /// Set every Brownian increment to zero.
    pub zero_noise: bool,
}

/// Share of steps a square-root type path may spend at `V ≤ 0`.
const MAX_TRUNCATED_SHARE: f64 = 0.10;

/// Coefficients with full truncation: the state is clipped into the
/// admissible domain, and a vanishing `g` or `k` is allowed.
fn truncated_coefficients(params: &ModelParams, v: f64) -> (f64, f64) {
    match params.kind {
        ModelKind::LogOU => (v.exp(), params.sigma_v),
        ModelKind::GarchFactor => {
            let v = v.max(0.0);
            (v.sqrt(), params.sigma_v * v)
        }
        ModelKind::Heston => {
            let v = v.max(0.0);
            (v.sqrt(), params.sigma_v * v.sqrt())
        }
        ModelKind::SteinStein => (v.abs(), params.sigma_v),
    }
}

fn truncates(kind: ModelKind) -> bool {
    matches!(kind, ModelKind::GarchFactor | ModelKind::Heston)
}

/// Simulate path `path_id` from its own substream of `seed`.
pub fn simulate_path(
    params: &ModelParams,
    grid: &TimeGrid,
    seed: u64,
    path_id: usize,
    opts: SimOptions,
) -> Result<MarketPath> {
    let mut rng = substream(seed, Domain::Paths, path_id as u64);
    simulate_path_with_rng(params, grid, &mut rng, path_id, opts)
}

fn simulate_path_with_rng(
    params: &ModelParams,
    grid: &TimeGrid,
    rng: &mut StreamRng,
    path_id: usize,
    opts: SimOptions,
) -> Result<MarketPath> {
    let n = grid.n_steps;
    let dt = grid.dt();
    let sdt = dt.sqrt();
    let rho = params.rho;
    let rho_bar = params.rho_bar();
    let garch = params.kind == ModelKind::GarchFactor;
    let normal = |rng: &mut StreamRng| -> f64 {
        if opts.zero_noise {
            0.0
        } else {
            rng.sample(StandardNormal)
        }
    };

    let mut path = MarketPath {
        path_id,
        grid: *grid,
        log_s: Vec::with_capacity(n + 1),
        v: Vec::with_capacity(n + 1),
        mu: Vec::with_capacity(n + 1),
        beta: Vec::with_capacity(n + 1),
        dw1: Vec::with_capacity(n),
        dw2: Vec::with_capacity(n),
        dw3: Vec::with_capacity(n),
        dw4: Vec::with_capacity(n),
        frozen_volatility: opts.frozen_volatility,
    };

    // priors first, then four normals per step, always in the same order
    let z_mu0 = normal(rng);
    let z_beta0 = normal(rng);
    let mut log_s = params.s0.ln();
    let mut v = params.v0;
    let mut mu = params.m0 + params.sigma0.sqrt() * z_mu0;
    let mut beta = if garch { params.m1 + params.sigma1.sqrt() * z_beta0 } else { 0.0 };
    let mut truncated_steps = 0usize;

    for _ in 0..n {
        path.log_s.push(log_s);
        path.v.push(v);
        path.mu.push(mu);
        path.beta.push(beta);

        let dw1 = sdt * normal(rng);
        let dw2 = sdt * normal(rng);
        let dw3 = sdt * normal(rng);
        let dw4 = sdt * normal(rng);

        let (g, k) = truncated_coefficients(params, v);
        let price_drift = if params.kind.is_factor_form() { mu * g } else { mu };
        log_s += (price_drift - 0.5 * g * g) * dt + g * dw1;

        if !opts.frozen_volatility {
            let v_eval = if truncates(params.kind) { v.max(0.0) } else { v };
            let f = vol_drift(params, v_eval, mu, beta);
            v += f * dt + k * (rho * dw1 + rho_bar * dw2);
            if truncates(params.kind) && v <= 0.0 {
                truncated_steps += 1;
            }
        }
        mu += params.lambda_mu * (params.theta_mu - mu) * dt + params.sigma_mu * dw3;
        if garch {
            beta += params.lambda_beta * beta * dt + params.sigma_beta * dw4;
        }

        path.dw1.push(dw1);
        path.dw2.push(dw2);
        path.dw3.push(dw3);
        path.dw4.push(dw4);
    }
    path.log_s.push(log_s);
    path.v.push(v);
    path.mu.push(mu);
    path.beta.push(beta);

    if truncated_steps as f64 > MAX_TRUNCATED_SHARE * n as f64 {
        return Err(Error::Simulation(format!(
            "path {path_id}: volatility at or below zero on {truncated_steps} of {n} steps"
        )));
    }
    Ok(path)
}

pub fn simulate_paths(params: &ModelParams, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathSet> {
    simulate_paths_with(params, grid, n_paths, seed, SimOptions::default())
}

/// Path-parallel simulation; the result does not depend on the worker count.
pub fn simulate_paths_with(
    params: &ModelParams,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<PathSet> {
    grid.validate()?;
    if n_paths == 0 {
        return Err(Error::validation("n_paths", "must be at least 1"));
    }
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|i| simulate_path(params, grid, seed, i, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(PathSet { paths, seed, params: *params, grid: *grid })
}

/// Observation increments `(ΔW̃¹, ΔW̃²)` recovered from price and
/// volatility, with coefficients frozen at each step's left endpoint.
pub fn observed_brownians(path: &MarketPath, params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if path.frozen_volatility {
        return Err(Error::Domain("volatility diffusion vanishes on a frozen-volatility path".into()));
    }
    let n = path.grid.n_steps;
    let dt = path.grid.dt();
    let rho = params.rho;
    let rho_bar = params.rho_bar();
    let mut w1 = Vec::with_capacity(n);
    let mut w2 = Vec::with_capacity(n);
    for i in 0..n {
        let (g, k) = model_coefficients(params, path.v[i])?;
        let d1 = (path.log_s[i + 1] - path.log_s[i] + 0.5 * g * g * dt) / g;
        let d2 = (path.v[i + 1] - path.v[i] - rho * k * d1) / (rho_bar * k);
        w1.push(d1);
        w2.push(d2);
    }
    Ok((w1, w2))
}

/// Rolling realized-volatility estimate of `g(V)` over `window` returns.
/// Entry `j` uses returns `j .. j + window`.
pub fn realized_vol_estimate(log_s: &[f64], window: usize, dt: f64) -> Result<Vec<f64>> {
    if window < 2 {
        return Err(Error::validation("window", "must be at least 2"));
    }
    let n_ret = log_s.len().saturating_sub(1);
    if n_ret < window {
        return Err(Error::InsufficientData { needed: window + 1, got: log_s.len() });
    }
    let sq: Vec<f64> = log_s.windows(2).map(|w| (w[1] - w[0]).powi(2)).collect();
    let scale = 1.0 / (window as f64 * dt);
    Ok(sq.windows(window).map(|w| (crate::stats::pairwise_sum(w) * scale).sqrt()).collect())
}

/// Map a volatility estimate back to the model's state (`g⁻¹`).
pub fn invert_vol(params: &ModelParams, g: f64) -> Result<f64> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::Domain(format!("volatility estimate {g} cannot be inverted")));
    }
    Ok(match params.kind {
        ModelKind::LogOU => g.ln(),
        ModelKind::GarchFactor | ModelKind::Heston => g * g,
        ModelKind::SteinStein => g,
    })
}

pub const PATH_CSV_HEADER: [&str; 10] = ["path_id", "t", "S", "V", "mu", "beta", "dW1", "dW2", "dW3", "dW4"];

/// Write paths as CSV. Increments on the row of node `i` are those of step
/// `i → i+1`; the terminal row leaves them empty.
pub fn write_paths_csv<W: Write>(paths: &[MarketPath], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PATH_CSV_HEADER).map_err(csv_err)?;
    for p in paths {
        let n = p.grid.n_steps;
        for i in 0..=n {
            let inc = |v: &Vec<f64>| if i < n { v[i].to_string() } else { String::new() };
            w.write_record([
                p.path_id.to_string(),
                p.grid.time(i).to_string(),
                p.log_s[i].exp().to_string(),
                p.v[i].to_string(),
                p.mu[i].to_string(),
                p.beta[i].to_string(),
                inc(&p.dw1),
                inc(&p.dw2),
                inc(&p.dw3),
                inc(&p.dw4),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read paths written by [`write_paths_csv`] on the given grid.
pub fn read_paths_csv<R: Read>(input: R, grid: &TimeGrid) -> Result<Vec<MarketPath>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(PATH_CSV_HEADER.iter().copied()) {
        return Err(Error::Io(format!("unexpected path CSV header: {header:?}")));
    }
    let mut paths: Vec<MarketPath> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse::<f64>().map_err(|e| Error::Io(format!("column {}: {e}", PATH_CSV_HEADER[j])))
        };
        let id: usize = rec[0].parse().map_err(|e| Error::Io(format!("path_id: {e}")))?;
        if paths.last().map(|p| p.path_id) != Some(id) {
            paths.push(MarketPath {
                path_id: id,
                grid: *grid,
                log_s: vec![],
                v: vec![],
                mu: vec![],
                beta: vec![],
                dw1: vec![],
                dw2: vec![],
                dw3: vec![],
                dw4: vec![],
                frozen_volatility: false,
            });
        }
        let p = paths.last_mut().expect("pushed above");
        p.log_s.push(num(2)?.ln());
        p.v.push(num(3)?);
        p.mu.push(num(4)?);
        p.beta.push(num(5)?);
        if !rec[6].is_empty() {
            p.dw1.push(num(6)?);
            p.dw2.push(num(7)?);
            p.dw3.push(num(8)?);
            p.dw4.push(num(9)?);
        }
    }
    for p in &paths {
        if p.v.len() != grid.n_nodes() || p.dw1.len() != grid.n_steps {
            return Err(Error::Dimension(format!("path {} does not match the grid", p.path_id)));
        }
    }
    Ok(paths)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

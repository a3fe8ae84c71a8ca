//! Filtering of the risk premia `X = (μ̃, β̃)` from the observation
//! Brownians `Y = (W̃¹, W̃²)`.
//!
//! The signal follows `dX = (AX + b)dt + G dM + B dW` with `M = (W³, W⁴)`
//! and `W = (W¹, W²)`; observations satisfy `dY = X dt + dW`.

mod kalman;
mod particle;
mod riccati;

use std::io::Write;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::models::{risks_from_state, ModelKind, ModelParams};
use crate::sde_sim::csv_err;

pub use kalman::{kalman_bucy_run, kalman_bucy_run_with, kb_step};
pub use particle::{particle_ks_run, particle_ks_run_from_cloud, ParticleCloud, ParticleOptions};
pub use riccati::{riccati_rhs, riccati_theta, stationary_theta, RiccatiPath};

/// Affine signal dynamics. Both filterable models reduce to constant
/// `A`, `b`, `G`, `B` (for the Garch model after taking `θ = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalDynamics {
    pub kind: ModelKind,
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub g: Matrix2<f64>,
    /// Loading on the price/volatility Brownians (zero for Garch).
    pub b_mat: Matrix2<f64>,
    pub affine: bool,
}

impl SignalDynamics {
    pub fn drift(&self, x: &Vector2<f64>) -> Vector2<f64> {
        self.a * x + self.b
    }

    /// `K = ½(BBᵀ + GGᵀ)`, the generator's second-order coefficient.
    pub fn k_mat(&self) -> Matrix2<f64> {
        0.5 * (self.b_mat * self.b_mat.transpose() + self.g * self.g.transpose())
    }
}

/// Gaussian prior on `X₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

/// Signal matrices of the Log-OU model (standard or mean-coupled).
pub fn logou_filter_matrices(params: &ModelParams) -> Result<SignalDynamics> {
    if params.kind != ModelKind::LogOU {
        return Err(Error::Kind(params.kind.to_string()));
    }
    let p = params;
    let rb = p.rho_bar();
    let r = p.rho / rb;
    let (lm, lv) = (p.lambda_mu, p.lambda_v);
    // c = ∂β̃/∂μ; the mean-coupled variant adds the λ_V/(σ_Vρ̄) exposure
    let c = if p.mean_coupled { lv / (p.sigma_v * rb) - r } else { -r };
    let a21 = r * (lm - lv) + if p.mean_coupled { -lm * lv / (p.sigma_v * rb) } else { 0.0 };
    Ok(SignalDynamics {
        kind: ModelKind::LogOU,
        a: Matrix2::new(-lm, 0.0, a21, -lv),
        b: Vector2::new(lm * p.theta_mu, c * lm * p.theta_mu),
        g: Matrix2::new(p.sigma_mu, 0.0, c * p.sigma_mu, 0.0),
        b_mat: Matrix2::new(0.0, 0.0, -r * lv, -lv),
        affine: true,
    })
}

/// Signal dynamics of the Garch factor model (`θ = 0`, `B ≡ 0`).
pub fn garch_signal_dynamics(params: &ModelParams) -> Result<SignalDynamics> {
    if params.kind != ModelKind::GarchFactor || params.theta != 0.0 {
        return Err(Error::Kind(params.kind.to_string()));
    }
    let p = params;
    let rb = p.rho_bar();
    let r = p.rho / rb;
    Ok(SignalDynamics {
        kind: ModelKind::GarchFactor,
        a: Matrix2::new(-p.lambda_mu, 0.0, r * (p.lambda_beta + p.lambda_mu), p.lambda_beta),
        b: Vector2::new(p.lambda_mu * p.theta_mu, -r * p.lambda_mu * p.theta_mu),
        g: Matrix2::new(p.sigma_mu, 0.0, -r * p.sigma_mu, -p.sigma_beta / (rb * p.sigma_v)),
        b_mat: Matrix2::zeros(),
        affine: true,
    })
}

pub fn signal_dynamics(params: &ModelParams) -> Result<SignalDynamics> {
    match params.kind {
        ModelKind::LogOU => logou_filter_matrices(params),
        ModelKind::GarchFactor => garch_signal_dynamics(params),
        k => Err(Error::Kind(k.to_string())),
    }
}

/// Prior on `X₀` implied by the Gaussian priors on `μ₀` (and `β₀`) with
/// `V₀` known.
pub fn filter_prior(params: &ModelParams) -> Result<Prior> {
    let p = params;
    match p.kind {
        ModelKind::LogOU => {
            // β̃₀ is affine in μ₀: β̃₀ = α + c·μ₀
            let (_, alpha) = risks_from_state(p, p.v0, 0.0, 0.0)?;
            let (_, one) = risks_from_state(p, p.v0, 1.0, 0.0)?;
            let c = one - alpha;
            Ok(Prior {
                mean: Vector2::new(p.m0, alpha + c * p.m0),
                cov: p.sigma0 * Matrix2::new(1.0, c, c, c * c),
            })
        }
        ModelKind::GarchFactor => {
            let rb = p.rho_bar();
            let r = -p.rho / rb;
            let s = 1.0 / (rb * p.sigma_v);
            Ok(Prior {
                mean: Vector2::new(p.m0, -s * p.m1 + r * p.m0),
                cov: Matrix2::new(
                    p.sigma0,
                    r * p.sigma0,
                    r * p.sigma0,
                    s * s * p.sigma1 + r * r * p.sigma0,
                ),
            })
        }
        k => Err(Error::Kind(k.to_string())),
    }
}

/// Filter estimates on a grid with their innovation increments.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub grid: TimeGrid,
    pub mu_bar: Vec<f64>,
    pub beta_bar: Vec<f64>,
    pub theta: RiccatiPath,
    pub dwbar1: Vec<f64>,
    pub dwbar2: Vec<f64>,
}

impl FilterOutput {
    pub fn estimate(&self, i: usize) -> Vector2<f64> {
        Vector2::new(self.mu_bar[i], self.beta_bar[i])
    }
}

/// Innovation increments `ΔW̄ⁱ = ΔW̃ⁱ − estimateᵢ·Δt`.
pub fn innovations(filter: &FilterOutput, obs1: &[f64], obs2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = filter.grid.n_steps;
    if obs1.len() != n || obs2.len() != n || filter.mu_bar.len() != n + 1 {
        return Err(Error::Dimension(format!(
            "filter has {} steps, observations {} and {}",
            n,
            obs1.len(),
            obs2.len()
        )));
    }
    let dt = filter.grid.dt();
    let w1 = (0..n).map(|i| obs1[i] - filter.mu_bar[i] * dt).collect();
    let w2 = (0..n).map(|i| obs2[i] - filter.beta_bar[i] * dt).collect();
    Ok((w1, w2))
}

pub const FILTER_CSV_HEADER: [&str; 8] =
    ["t", "mu_bar", "beta_bar", "theta11", "theta12", "theta22", "dWbar1", "dWbar2"];

pub fn write_filter_csv<W: Write>(filter: &FilterOutput, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FILTER_CSV_HEADER).map_err(csv_err)?;
    let n = filter.grid.n_steps;
    for i in 0..=n {
        let th = filter.theta.theta[i];
        let inc = |v: &Vec<f64>| if i < n { v[i].to_string() } else { String::new() };
        w.write_record([
            filter.grid.time(i).to_string(),
            filter.mu_bar[i].to_string(),
            filter.beta_bar[i].to_string(),
            th[(0, 0)].to_string(),
            th[(0, 1)].to_string(),
            th[(1, 1)].to_string(),
            inc(&filter.dwbar1),
            inc(&filter.dwbar2),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

//! Dual control problem for the Log-OU market.
//!
//! The factor `Y = (V, μ̄)` drives the dual value `Φ(t, v, m)`, which solves
//! `−Φ_t − ½Tr(ΣΣᵀD²Φ) + H(y, DΦ) = 0`, `Φ(T) = 0`. For the Log-OU model
//! the separation `Φ = Ãv + B̃ − v(T−t) − Ām² − B̄m − C̄` reduces this to
//! scalar ODEs, solved in [`solve_value_coeffs_logou`].

mod coeffs;
mod log;
mod residual;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::{filter_prior, logou_filter_matrices, stationary_theta, RiccatiPath, SignalDynamics};
use crate::models::{ModelKind, ModelParams, UtilitySpec};

pub use coeffs::{phi_eval, solve_value_coeffs_logou, write_value_coeffs_csv, CoefficientForm, ValueCoeffs};
pub use log::phi_log_logou;
pub use residual::{pde_residual, FnSurface, ValueSurface};

/// How the filter covariance enters the value equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ThetaMode {
    /// Frozen at the long-run covariance `Θ∞`.
    #[default]
    Stationary,
    /// `Θ(t)` from the Riccati path.
    TimeVarying,
}

/// Tolerance on the last-step change that qualifies a Riccati path as stationary.
pub const STATIONARY_TOL: f64 = 1e-8;

/// Coefficients of the controlled factor `Y = (V, μ̄)`:
/// drift `Γ`, diffusion `Σ` (rows `K₁ᵀ`... see [`YField::sigma`]) and `ψ(y) = m`.
#[derive(Debug, Clone, PartialEq)]
pub struct YField {
    pub params: ModelParams,
    pub mode: ThetaMode,
    theta_const: Matrix2<f64>,
    theta_path: Option<RiccatiPath>,
    /// `Θ ≡ 0`: the filter is deterministic and `Σ`'s second row vanishes.
    pub degenerate: bool,
}

impl YField {
    /// Field with a fixed covariance (no stationarity test).
    pub fn with_constant_theta(params: &ModelParams, theta: Matrix2<f64>) -> Result<Self> {
        check_logou(params)?;
        Ok(Self {
            params: *params,
            mode: ThetaMode::Stationary,
            theta_const: theta,
            theta_path: None,
            degenerate: theta.amax() == 0.0,
        })
    }

    /// Stationary field with `Θ∞` computed from the model's prior covariance.
    pub fn stationary(params: &ModelParams) -> Result<Self> {
        check_logou(params)?;
        let dyn_ = logou_filter_matrices(params)?;
        let (theta, change) = stationary_theta(&dyn_, &filter_prior(params)?.cov)?;
        if change >= STATIONARY_TOL {
            return Err(Error::NotConverged { change, tol: STATIONARY_TOL });
        }
        Self::with_constant_theta(params, theta)
    }

    pub fn theta_at(&self, t: f64) -> Result<Matrix2<f64>> {
        match (&self.mode, &self.theta_path) {
            (ThetaMode::TimeVarying, Some(path)) => path.at(t),
            _ => Ok(self.theta_const),
        }
    }

    pub fn psi(&self, _v: f64, m: f64) -> f64 {
        m
    }

    pub fn gamma(&self, v: f64, m: f64) -> Vector2<f64> {
        let p = &self.params;
        Vector2::new(p.lambda_v * (p.theta - v), p.lambda_mu * (p.theta_mu - m))
    }

    /// `K₁ = (ρk, ϑ)`, loading of `Y` on the price innovation.
    pub fn k1(&self, t: f64) -> Result<Vector2<f64>> {
        let th = self.theta_at(t)?;
        Ok(Vector2::new(self.params.rho * self.params.sigma_v, th[(0, 0)]))
    }

    /// `K₂ = (ρ̄k, Υ)`, loading of `Y` on the volatility innovation.
    pub fn k2(&self, t: f64) -> Result<Vector2<f64>> {
        let th = self.theta_at(t)?;
        Ok(Vector2::new(self.params.rho_bar() * self.params.sigma_v, th[(0, 1)]))
    }

    /// `Σ = [[ρk, ρ̄k], [ϑ, Υ]]`; its columns are `K₁` and `K₂`.
    pub fn sigma(&self, t: f64) -> Result<Matrix2<f64>> {
        Ok(Matrix2::from_columns(&[self.k1(t)?, self.k2(t)?]))
    }
}

fn check_logou(params: &ModelParams) -> Result<()> {
    if params.kind != ModelKind::LogOU {
        return Err(Error::Kind(params.kind.to_string()));
    }
    if params.mean_coupled {
        return Err(Error::validation("mean_coupled", "the dual value is solved for constant θ only"));
    }
    Ok(())
}

/// Build the `Y`-field from a Riccati path. Stationary mode freezes the
/// path's terminal value and requires it to have converged (unless the
/// covariance is identically zero).
pub fn yfield_assemble(
    params: &ModelParams,
    _dyn: &SignalDynamics,
    theta: &RiccatiPath,
    mode: ThetaMode,
) -> Result<YField> {
    check_logou(params)?;
    let n = theta.grid.n_steps;
    let degenerate = theta.theta.iter().all(|m| m.amax() == 0.0);
    match mode {
        ThetaMode::Stationary => {
            let change = (theta.theta[n] - theta.theta[n - 1]).amax();
            if !degenerate && change >= STATIONARY_TOL {
                return Err(Error::NotConverged { change, tol: STATIONARY_TOL });
            }
            let mut f = YField::with_constant_theta(params, theta.last())?;
            f.degenerate = degenerate;
            Ok(f)
        }
        ThetaMode::TimeVarying => Ok(YField {
            params: *params,
            mode,
            theta_const: theta.last(),
            theta_path: Some(theta.clone()),
            degenerate,
        }),
    }
}

fn power_q(p: f64) -> Result<f64> {
    UtilitySpec::power(p)?;
    Ok(p / (p - 1.0))
}

/// Closed-form Hamiltonian for power utility,
/// `H = ½Qᵀ(ΣΣᵀ − κK₂K₂ᵀ)Q − Qᵀ(Γ − qψK₁) + ½q(q−1)ψ²`, `κ = q/(q−1)`.
pub fn hamiltonian_power(field: &YField, t: f64, y: (f64, f64), q_vec: &Vector2<f64>, p: f64) -> Result<f64> {
    let q = power_q(p)?;
    let (v, m) = y;
    let s = field.sigma(t)?;
    let k1 = field.k1(t)?;
    let k2 = field.k2(t)?;
    let kappa = q / (q - 1.0);
    let psi = field.psi(v, m);
    let quad = s * s.transpose() - kappa * k2 * k2.transpose();
    Ok(0.5 * q_vec.dot(&(quad * q_vec)) - q_vec.dot(&(field.gamma(v, m) - q * psi * k1))
        + 0.5 * q * (q - 1.0) * psi * psi)
}

/// Objective inside the infimum form of the Hamiltonian at control `ν`:
/// `½QᵀΣΣᵀQ − QᵀΓ + ½q(q−1)(ψ² + ν²) + q(ψK₁ + νK₂)ᵀQ`.
pub fn hamiltonian_inf_objective(
    field: &YField,
    t: f64,
    y: (f64, f64),
    q_vec: &Vector2<f64>,
    p: f64,
    nu: f64,
) -> Result<f64> {
    let q = power_q(p)?;
    let (v, m) = y;
    let s = field.sigma(t)?;
    let psi = field.psi(v, m);
    let k1 = field.k1(t)?;
    let k2 = field.k2(t)?;
    Ok(0.5 * q_vec.dot(&(s * s.transpose() * q_vec)) - q_vec.dot(&field.gamma(v, m))
        + 0.5 * q * (q - 1.0) * (psi * psi + nu * nu)
        + q * (psi * k1 + nu * k2).dot(q_vec))
}

/// Minimiser of [`hamiltonian_inf_objective`]: `ν = −K₂ᵀQ/(q−1)`.
pub fn nu_star_from_gradient(field: &YField, t: f64, d_phi: &Vector2<f64>, p: f64) -> Result<f64> {
    let q = power_q(p)?;
    Ok(-field.k2(t)?.dot(d_phi) / (q - 1.0))
}

/// Optimal dual control `ν̃(t, y)`; identically zero for log utility.
pub fn nu_star(field: &YField, coeffs: Option<&ValueCoeffs>, utility: &UtilitySpec, t: f64, y: (f64, f64)) -> Result<f64> {
    match *utility {
        UtilitySpec::Log => Ok(0.0),
        UtilitySpec::Power { p } => {
            let coeffs = coeffs.ok_or_else(|| Error::validation("coeffs", "power utility needs value coefficients"))?;
            let (_, d_phi) = phi_eval(coeffs, t, y.0, y.1)?;
            nu_star_from_gradient(field, t, &d_phi, p)
        }
    }
}

/// Dual value at multiplier `z` and the multiplier `z_x` for wealth `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualValue {
    pub j_dual: f64,
    pub z_x: Option<f64>,
}

/// `J̃(z) = g₁(z)·J̃(1) + g₂(z)` with `J̃(1) = −1 − Φ₀` (log) or
/// `−e^{−Φ₀}/q` (power).
pub fn dual_objective(z: f64, utility: &UtilitySpec, phi0: f64) -> f64 {
    match *utility {
        UtilitySpec::Log => -1.0 - phi0 - z.ln(),
        UtilitySpec::Power { p } => {
            let q = p / (p - 1.0);
            -z.powf(q) * (-phi0).exp() / q
        }
    }
}

fn dual_objective_dz(z: f64, utility: &UtilitySpec, phi0: f64) -> (f64, f64) {
    match *utility {
        UtilitySpec::Log => (-1.0 / z, 1.0 / (z * z)),
        UtilitySpec::Power { p } => {
            let q = p / (p - 1.0);
            let e = (-phi0).exp();
            (-z.powf(q - 1.0) * e, -(q - 1.0) * z.powf(q - 2.0) * e)
        }
    }
}

/// Closed-form multiplier: `1/x` (log) or `(x·e^{Φ₀})^{p−1}` (power).
pub fn z_x_closed(x: f64, utility: &UtilitySpec, phi0: f64) -> f64 {
    match *utility {
        UtilitySpec::Log => 1.0 / x,
        UtilitySpec::Power { p } => (x * phi0.exp()).powf(p - 1.0),
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Dual value at `z`, and when `x` is given, `z_x = argmin_z J̃(z) + xz`
/// found by golden-section search on `ln z` and polished by Newton steps.
pub fn dual_value(z: f64, x: Option<f64>, utility: &UtilitySpec, phi0: f64) -> Result<DualValue> {
    utility.validate()?;
    if !(z > 0.0) {
        return Err(Error::Domain(format!("dual multiplier {z} must be positive")));
    }
    let j_dual = dual_objective(z, utility, phi0);
    let z_x = match x {
        None => None,
        Some(x) if x > 0.0 => Some(minimise_multiplier(x, utility, phi0)?),
        Some(x) => return Err(Error::Domain(format!("wealth {x} must be positive"))),
    };
    Ok(DualValue { j_dual, z_x })
}

fn minimise_multiplier(x: f64, utility: &UtilitySpec, phi0: f64) -> Result<f64> {
    let obj = |u: f64| {
        let z = u.exp();
        dual_objective(z, utility, phi0) + x * z
    };
    // walk downhill from u = −ln x with doubling steps to bracket the minimum
    let mut u = -x.ln();
    let mut fu = obj(u);
    let mut step = if obj(u + 0.1) < fu { 0.1 } else { -0.1 };
    let mut prev = u;
    loop {
        let next = u + step;
        let fnext = obj(next);
        if !fnext.is_finite() {
            return Err(Error::Convexity);
        }
        if fnext >= fu {
            break;
        }
        prev = u;
        u = next;
        fu = fnext;
        step *= 2.0;
        if step.abs() > 1e3 {
            return Err(Error::Convexity);
        }
    }
    let (mut lo, mut hi) = if prev == u {
        (u - step.abs(), u + step.abs())
    } else if step > 0.0 {
        (prev, u + step)
    } else {
        (u + step, prev)
    };

    // unimodality on the bracket: sampled values must fall then rise
    let samples: Vec<f64> = (0..=200).map(|i| obj(lo + (hi - lo) * i as f64 / 200.0)).collect();
    let mut rising = false;
    for w in samples.windows(2) {
        if !w[1].is_finite() {
            return Err(Error::Convexity);
        }
        if w[1] > w[0] + 1e-14 * w[0].abs().max(1.0) {
            rising = true;
        } else if rising && w[1] < w[0] - 1e-12 * w[0].abs().max(1.0) {
            return Err(Error::Convexity);
        }
    }

    let mut a = hi - GOLDEN * (hi - lo);
    let mut b = lo + GOLDEN * (hi - lo);
    let (mut fa, mut fb) = (obj(a), obj(b));
    while hi - lo > 1e-10 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - GOLDEN * (hi - lo);
            fa = obj(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + GOLDEN * (hi - lo);
            fb = obj(b);
        }
    }
    let mut z = (0.5 * (lo + hi)).exp();
    for _ in 0..20 {
        let (d1, d2) = dual_objective_dz(z, utility, phi0);
        let step = (d1 + x) / d2;
        let next = z - step;
        if !(next > 0.0) {
            break;
        }
        z = next;
        if step.abs() <= 1e-16 * z {
            break;
        }
    }
    Ok(z)
}

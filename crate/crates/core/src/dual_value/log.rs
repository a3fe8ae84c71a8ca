use super::YField;
use crate::error::{Error, Result};
use crate::ode::rk4_step;

const STEP: f64 = 5e-4;

/// Log-utility dual value `Φ(t, y) = −½∫ₜᵀ E[μ̄ₛ²] ds` for `μ̄_t = m`.
///
/// The filter mean is Gaussian with mean `M' = λ_μ(θ_μ − M)` and variance
/// `Var' = −2λ_μVar + Θ₁₁² + Θ₁₂²`, `Var(t) = 0`.
pub fn phi_log_logou(field: &YField, horizon: f64, t: f64, y: (f64, f64)) -> Result<f64> {
    if t > horizon {
        return Err(Error::Range { t, t0: f64::NEG_INFINITY, t1: horizon });
    }
    if t == horizon {
        return Ok(0.0);
    }
    let prm = &field.params;
    let f = |s: f64, x: &[f64; 3]| {
        let th = field.theta_at(s).unwrap_or(field.theta_const);
        let (mean, var) = (x[0], x[1]);
        [
            prm.lambda_mu * (prm.theta_mu - mean),
            -2.0 * prm.lambda_mu * var + th[(0, 0)].powi(2) + th[(0, 1)].powi(2),
            -0.5 * (mean * mean + var),
        ]
    };
    let n = ((horizon - t) / STEP).ceil().max(1.0) as usize;
    let h = (horizon - t) / n as f64;
    let mut x = [y.1, 0.0, 0.0];
    for i in 0..n {
        x = rk4_step(&f, t + i as f64 * h, &x, h);
    }
    Ok(x[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelParams;
    use nalgebra::Matrix2;

    #[test]
    fn deterministic_zero_drift() {
        let p = ModelParams { m0: 0.0, theta_mu: 0.0, sigma_mu: 0.0, sigma0: 0.0, ..ModelParams::canonical_log_ou() };
        let f = YField::with_constant_theta(&p, Matrix2::zeros()).unwrap();
        assert_eq!(phi_log_logou(&f, 1.0, 0.0, (p.v0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn constant_drift() {
        let p = ModelParams { m0: 0.1, theta_mu: 0.1, sigma_mu: 0.0, sigma0: 0.0, ..ModelParams::canonical_log_ou() };
        let f = YField::with_constant_theta(&p, Matrix2::zeros()).unwrap();
        let phi = phi_log_logou(&f, 1.0, 0.0, (p.v0, 0.1)).unwrap();
        assert!((phi + 0.005).abs() < 1e-15);
    }

    #[test]
    fn closed_form_stationary() {
        // Var(s) = c(1 − e^{−2λ(s−t)})/(2λ), M(s) = θ + (m−θ)e^{−λ(s−t)}
        let p = ModelParams::canonical_log_ou();
        let f = YField::stationary(&p).unwrap();
        let th = f.theta_at(0.0).unwrap();
        let cst = th[(0, 0)].powi(2) + th[(0, 1)].powi(2);
        let (l, tm, m, big_t): (f64, f64, f64, f64) = (p.lambda_mu, p.theta_mu, 0.25, 1.0);
        let int_m2 = tm * tm * big_t + 2.0 * tm * (m - tm) * (1.0 - (-l * big_t).exp()) / l
            + (m - tm).powi(2) * (1.0 - (-2.0 * l * big_t).exp()) / (2.0 * l);
        let int_var = cst / (2.0 * l) * (big_t - (1.0 - (-2.0 * l * big_t).exp()) / (2.0 * l));
        let closed = -0.5 * (int_m2 + int_var);
        assert!((phi_log_logou(&f, 1.0, 0.0, (p.v0, m)).unwrap() - closed).abs() < 1e-13);
    }
}

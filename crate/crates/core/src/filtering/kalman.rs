use nalgebra::{Matrix2, Vector2};

use super::{riccati_theta, FilterOutput, Prior, RiccatiPath, SignalDynamics};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// One Euler step of the correlated Kalman–Bucy filter,
/// `x + (Ax + b)Δt + (B + Θ)(ΔY − xΔt)`.
#[inline]
pub fn kb_step(
    dyn_: &SignalDynamics,
    x: &Vector2<f64>,
    theta: &Matrix2<f64>,
    dy: &Vector2<f64>,
    dt: f64,
) -> Vector2<f64> {
    x + dyn_.drift(x) * dt + (dyn_.b_mat + theta) * (dy - x * dt)
}

/// Run the filter on observation increments, integrating the Riccati
/// equation on the same grid.
pub fn kalman_bucy_run(
    dyn_: &SignalDynamics,
    obs1: &[f64],
    obs2: &[f64],
    grid: &TimeGrid,
    prior: &Prior,
) -> Result<FilterOutput> {
    let theta = riccati_theta(dyn_, &prior.cov, grid)?;
    kalman_bucy_run_with(dyn_, &theta, obs1, obs2, prior.mean)
}

/// Run the filter with a precomputed covariance path.
pub fn kalman_bucy_run_with(
    dyn_: &SignalDynamics,
    theta: &RiccatiPath,
    obs1: &[f64],
    obs2: &[f64],
    mean0: Vector2<f64>,
) -> Result<FilterOutput> {
    let grid = theta.grid;
    let n = grid.n_steps;
    if obs1.len() != n || obs2.len() != n {
        return Err(Error::Dimension(format!(
            "grid has {n} steps, observations have {} and {}",
            obs1.len(),
            obs2.len()
        )));
    }
    let dt = grid.dt();
    let mut x = mean0;
    let mut out = FilterOutput {
        grid,
        mu_bar: Vec::with_capacity(n + 1),
        beta_bar: Vec::with_capacity(n + 1),
        theta: theta.clone(),
        dwbar1: Vec::with_capacity(n),
        dwbar2: Vec::with_capacity(n),
    };
    for i in 0..n {
        out.mu_bar.push(x[0]);
        out.beta_bar.push(x[1]);
        let dy = Vector2::new(obs1[i], obs2[i]);
        out.dwbar1.push(dy[0] - x[0] * dt);
        out.dwbar2.push(dy[1] - x[1] * dt);
        x = kb_step(dyn_, &x, &theta.theta[i], &dy, dt);
    }
    out.mu_bar.push(x[0]);
    out.beta_bar.push(x[1]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::{filter_prior, logou_filter_matrices};
    use crate::models::ModelParams;
    use crate::sde_sim::{observed_brownians, simulate_path, simulate_paths, SimOptions};

    #[test]
    fn deterministic_limit_is_ou_decay() {
        let p = ModelParams { sigma_mu: 0.0, sigma0: 0.0, m0: 0.3, ..ModelParams::canonical_log_ou() };
        let d = logou_filter_matrices(&p).unwrap();
        let mut errs = Vec::new();
        for n in [200, 400] {
            let g = TimeGrid::new(0.0, 1.0, n).unwrap();
            let path = simulate_path(&p, &g, 4, 0, SimOptions::default()).unwrap();
            let (o1, o2) = observed_brownians(&path, &p).unwrap();
            let f = kalman_bucy_run(&d, &o1, &o2, &g, &filter_prior(&p).unwrap()).unwrap();
            let closed = p.theta_mu + (p.m0 - p.theta_mu) * (-p.lambda_mu).exp();
            errs.push((f.mu_bar[n] - closed).abs());
            // known drift: filter tracks the truth
            assert!((f.mu_bar[n] - path.mu[n]).abs() < 1e-12);
        }
        assert!(errs[0] < 1e-3 && errs[1] < 0.6 * errs[0], "{errs:?}");
    }

    #[test]
    fn perfect_prior_gives_raw_innovations() {
        let p = ModelParams { sigma_mu: 0.0, sigma0: 0.0, rho: 0.0, ..ModelParams::canonical_log_ou() };
        let d = logou_filter_matrices(&p).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let path = simulate_path(&p, &g, 5, 0, SimOptions::default()).unwrap();
        let (o1, o2) = observed_brownians(&path, &p).unwrap();
        let f = kalman_bucy_run(&d, &o1, &o2, &g, &filter_prior(&p).unwrap()).unwrap();
        for i in 0..100 {
            assert!((f.dwbar1[i] - path.dw1[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = ModelParams::canonical_log_ou();
        let d = logou_filter_matrices(&p).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let err = kalman_bucy_run(&d, &[0.0; 9], &[0.0; 10], &g, &filter_prior(&p).unwrap());
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn linear_in_prior_mean() {
        let p = ModelParams::canonical_log_ou();
        let d = logou_filter_matrices(&p).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 500).unwrap();
        let set = simulate_paths(&p, &g, 1, 21).unwrap();
        let (o1, o2) = observed_brownians(&set.paths[0], &p).unwrap();
        let prior = filter_prior(&p).unwrap();
        let th = riccati_theta(&d, &prior.cov, &g).unwrap();
        let m1 = Vector2::new(0.2, -0.1);
        let m2 = Vector2::new(-0.4, 0.6);
        let f1 = kalman_bucy_run_with(&d, &th, &o1, &o2, m1).unwrap();
        let f2 = kalman_bucy_run_with(&d, &th, &o1, &o2, m2).unwrap();
        let mut diff = m1 - m2;
        let dt = g.dt();
        for i in 0..500 {
            diff += (d.a - (d.b_mat + th.theta[i])) * diff * dt;
            let got = f1.estimate(i + 1) - f2.estimate(i + 1);
            assert!((got - diff).amax() < 1e-10);
        }
    }

    #[test]
    fn correlated_combination_is_exact() {
        // β̃ + (ρ/ρ̄)μ̃ is a function of V alone, so the filter recovers it
        let p = ModelParams::canonical_log_ou();
        let d = logou_filter_matrices(&p).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 400).unwrap();
        let set = simulate_paths(&p, &g, 5, 8).unwrap();
        let r = p.rho / p.rho_bar();
        for path in &set.paths {
            let (o1, o2) = observed_brownians(path, &p).unwrap();
            let f = kalman_bucy_run(&d, &o1, &o2, &g, &filter_prior(&p).unwrap()).unwrap();
            for i in (0..=400).step_by(50) {
                let (mt, bt) = crate::models::risks_from_state(&p, path.v[i], path.mu[i], 0.0).unwrap();
                let truth = bt + r * mt;
                let est = f.beta_bar[i] + r * f.mu_bar[i];
                assert!((truth - est).abs() < 1e-9, "step {i}: {truth} vs {est}");
            }
        }
    }
}

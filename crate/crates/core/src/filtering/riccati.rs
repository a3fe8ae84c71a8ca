use nalgebra::Matrix2;

use super::SignalDynamics;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::ode::{hermite, rk4_step};

const PSD_TOL: f64 = 1e-10;

/// Filter covariance on a grid, with its time derivative at every node
/// (used for Hermite interpolation between nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiPath {
    pub grid: TimeGrid,
    pub theta: Vec<Matrix2<f64>>,
    pub deriv: Vec<Matrix2<f64>>,
}

impl RiccatiPath {
    pub fn last(&self) -> Matrix2<f64> {
        self.theta[self.grid.n_steps]
    }

    /// Interpolated `Θ(t)`.
    pub fn at(&self, t: f64) -> Result<Matrix2<f64>> {
        self.at_with_deriv(t).map(|(th, _)| th)
    }

    pub fn at_with_deriv(&self, t: f64) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
        if !self.grid.contains(t) {
            return Err(Error::Range { t, t0: self.grid.t0, t1: self.grid.horizon });
        }
        let i = self.grid.locate(t);
        let (t0, h) = (self.grid.time(i), self.grid.dt());
        let mut th = Matrix2::zeros();
        let mut d = Matrix2::zeros();
        for (r, c) in [(0, 0), (0, 1), (1, 1)] {
            let (v, s) = hermite(
                t0,
                h,
                self.theta[i][(r, c)],
                self.deriv[i][(r, c)],
                self.theta[i + 1][(r, c)],
                self.deriv[i + 1][(r, c)],
                t,
            );
            th[(r, c)] = v;
            th[(c, r)] = v;
            d[(r, c)] = s;
            d[(c, r)] = s;
        }
        Ok((th, d))
    }
}

/// Right-hand side in the symmetric form
/// `AΘ + ΘAᵀ + GGᵀ − (Θ+B)(Θ+B)ᵀ + BBᵀ`.
pub fn riccati_rhs(dyn_: &SignalDynamics, theta: &Matrix2<f64>) -> Matrix2<f64> {
    let a = &dyn_.a;
    let b = &dyn_.b_mat;
    let tb = theta + b;
    a * theta + theta * a.transpose() + dyn_.g * dyn_.g.transpose() - tb * tb.transpose()
        + b * b.transpose()
}

fn pack(m: &Matrix2<f64>) -> [f64; 3] {
    [m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]]
}

fn unpack(y: &[f64; 3]) -> Matrix2<f64> {
    Matrix2::new(y[0], y[1], y[1], y[2])
}

fn min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let tr = m[(0, 0)] + m[(1, 1)];
    let diff = m[(0, 0)] - m[(1, 1)];
    0.5 * (tr - (diff * diff + 4.0 * m[(0, 1)] * m[(0, 1)]).sqrt())
}

/// Integrate the covariance Riccati equation forward with RK4. The state is
/// stored as the three free entries, so every node is exactly symmetric.
pub fn riccati_theta(dyn_: &SignalDynamics, theta0: &Matrix2<f64>, grid: &TimeGrid) -> Result<RiccatiPath> {
    grid.validate()?;
    if (theta0[(0, 1)] - theta0[(1, 0)]).abs() > 1e-12 * (1.0 + theta0.amax()) {
        return Err(Error::validation("theta0", "must be symmetric"));
    }
    if min_eigenvalue(theta0) < -PSD_TOL {
        return Err(Error::validation("theta0", "must be positive semidefinite"));
    }
    let f = |_t: f64, y: &[f64; 3]| pack(&riccati_rhs(dyn_, &unpack(y)));
    let dt = grid.dt();
    let mut y = pack(theta0);
    let mut theta = Vec::with_capacity(grid.n_nodes());
    let mut deriv = Vec::with_capacity(grid.n_nodes());
    for i in 0..=grid.n_steps {
        let m = unpack(&y);
        if !y.iter().all(|x| x.is_finite()) || min_eigenvalue(&m) < -PSD_TOL {
            return Err(Error::Integration(format!("covariance lost PSD at t = {}", grid.time(i))));
        }
        theta.push(m);
        deriv.push(riccati_rhs(dyn_, &m));
        if i < grid.n_steps {
            y = rk4_step(&f, grid.time(i), &y, dt);
        }
    }
    Ok(RiccatiPath { grid: *grid, theta, deriv })
}

/// Long-run covariance `Θ∞`: integrates to `T = 50/min(λ)` from `theta0`
/// and returns the terminal value together with the last-step change.
pub fn stationary_theta(dyn_: &SignalDynamics, theta0: &Matrix2<f64>) -> Result<(Matrix2<f64>, f64)> {
    let rate = (-dyn_.a[(0, 0)]).min(-dyn_.a[(1, 1)]).abs().max(1e-3);
    let horizon = 50.0 / rate;
    let steps = ((horizon / 0.01).ceil() as usize).max(2000);
    let path = riccati_theta(dyn_, theta0, &TimeGrid::new(0.0, horizon, steps)?)?;
    let change = (path.theta[steps] - path.theta[steps - 1]).amax();
    Ok((path.last(), change))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::logou_filter_matrices;
    use crate::models::ModelParams;
    use nalgebra::Vector2;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, n).unwrap()
    }

    fn zero_dyn() -> SignalDynamics {
        let mut d = logou_filter_matrices(&ModelParams::canonical_log_ou()).unwrap();
        d.a = Matrix2::zeros();
        d.b = Vector2::zeros();
        d.g = Matrix2::zeros();
        d.b_mat = Matrix2::zeros();
        d
    }

    #[test]
    fn zero_dynamics_stay_zero() {
        let p = riccati_theta(&zero_dyn(), &Matrix2::zeros(), &grid(10)).unwrap();
        assert!(p.theta.iter().all(|m| *m == Matrix2::zeros()));
    }

    #[test]
    fn zero_is_fixed_without_signal_noise() {
        let params = ModelParams { sigma_mu: 0.0, ..ModelParams::canonical_log_ou() };
        let d = logou_filter_matrices(&params).unwrap();
        let p = riccati_theta(&d, &Matrix2::zeros(), &grid(100)).unwrap();
        assert!(p.theta.iter().all(|m| m.amax() == 0.0));
    }

    #[test]
    fn refined_step_reference() {
        let d = logou_filter_matrices(&ModelParams::canonical_log_ou()).unwrap();
        let r = 0.577_35;
        let th0 = 0.04 * Matrix2::new(1.0, r, r, 1.0 / 3.0);
        let coarse = riccati_theta(&d, &th0, &grid(2000)).unwrap().last();
        let fine = riccati_theta(&d, &th0, &grid(16_000)).unwrap().last();
        assert!((coarse - fine).amax() <= 1e-8);
    }

    #[test]
    fn logou_stationary_is_rank_one() {
        let params = ModelParams::canonical_log_ou();
        let d = logou_filter_matrices(&params).unwrap();
        let (th, change) = stationary_theta(&d, &Matrix2::zeros()).unwrap();
        assert!(change < 1e-12);
        let s = params.logou_stationary_variance();
        let r = -params.rho / params.rho_bar();
        assert!((th - s * Matrix2::new(1.0, r, r, r * r)).amax() < 1e-10);
        assert!(riccati_rhs(&d, &th).amax() < 1e-10);
    }

    #[test]
    fn interpolation_hits_nodes_and_rejects_outside() {
        let d = logou_filter_matrices(&ModelParams::canonical_log_ou()).unwrap();
        let p = riccati_theta(&d, &Matrix2::zeros(), &grid(10)).unwrap();
        assert!((p.at(0.3).unwrap() - p.theta[3]).amax() < 1e-15);
        assert!(matches!(p.at(1.5), Err(Error::Range { .. })));
    }

    #[test]
    fn non_psd_prior_rejected() {
        let d = zero_dyn();
        let bad = Matrix2::new(1.0, 2.0, 2.0, 1.0);
        assert!(riccati_theta(&d, &bad, &grid(5)).is_err());
    }
}

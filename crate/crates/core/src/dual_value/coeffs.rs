use std::io::Write;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{power_q, ThetaMode, YField};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::ode::{hermite, rk4_step};
use crate::sde_sim::csv_err;

/// Which ODE system to integrate for `(Ã, B̃)`.
///
/// `Consistent` is obtained by substituting the separation ansatz into the
/// value PDE (it forces `Ã = T − t`, `B̃ ≡ 0`). `Printed` reproduces the
/// published `Ã' = λ_VÃ − λ_V(T−t)`, which does not solve the PDE and is
/// kept for comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CoefficientForm {
    #[default]
    Consistent,
    Printed,
}

/// `Ã, B̃, Ā, B̄, C̄` on a grid, with their time derivatives at the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueCoeffs {
    pub grid: TimeGrid,
    pub a_tilde: Vec<f64>,
    pub b_tilde: Vec<f64>,
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub c_bar: Vec<f64>,
    deriv: Vec<[f64; 5]>,
    pub p: f64,
    pub q: f64,
    pub form: CoefficientForm,
}

impl ValueCoeffs {
    fn node(&self, i: usize) -> [f64; 5] {
        [self.a_tilde[i], self.b_tilde[i], self.a_bar[i], self.b_bar[i], self.c_bar[i]]
    }

    /// Interpolated coefficients and their time derivatives at `t`.
    pub fn at(&self, t: f64) -> Result<([f64; 5], [f64; 5])> {
        if !self.grid.contains(t) {
            return Err(Error::Range { t, t0: self.grid.t0, t1: self.grid.horizon });
        }
        let i = self.grid.locate(t);
        let (y0, y1) = (self.node(i), self.node(i + 1));
        let (d0, d1) = (self.deriv[i], self.deriv[i + 1]);
        let mut val = [0.0; 5];
        let mut der = [0.0; 5];
        for k in 0..5 {
            (val[k], der[k]) = hermite(self.grid.time(i), self.grid.dt(), y0[k], d0[k], y1[k], d1[k], t);
        }
        Ok((val, der))
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon
    }
}

/// Right-hand side `d/dt (Ã, B̃, Ā, B̄, C̄)`.
fn coeff_rhs(field: &YField, q: f64, form: CoefficientForm, horizon: f64, t: f64, y: &[f64; 5]) -> [f64; 5] {
    let prm = &field.params;
    let th = field.theta_at(t).unwrap_or(field.theta_const);
    let (t11, t12) = (th[(0, 0)], th[(0, 1)]);
    let kappa = q / (q - 1.0);
    let (sv, rho, rb) = (prm.sigma_v, prm.rho, prm.rho_bar());
    let a = sv * sv * (1.0 - kappa * rb * rb);
    let c = rho * sv * t11 + (1.0 - kappa) * rb * sv * t12;
    let d = t11 * t11 + (1.0 - kappa) * t12 * t12;
    let s = t11 * t11 + t12 * t12;
    let tau = horizon - t;
    let [at, _bt, ab, bb, _cb] = *y;
    let alpha = at - tau;
    let lmt = prm.lambda_mu * prm.theta_mu;
    let lin = prm.lambda_mu + q * t11;

    let d_at = match form {
        CoefficientForm::Consistent => prm.lambda_v * at - prm.lambda_v * tau - 1.0,
        CoefficientForm::Printed => prm.lambda_v * at - prm.lambda_v * tau,
    };
    let d_bt = 0.5 * a * alpha * alpha - prm.lambda_v * prm.theta * alpha;
    let d_ab = -2.0 * d * ab * ab + 2.0 * lin * ab - 0.5 * q * (q - 1.0);
    let d_bb = (-2.0 * d * ab + lin) * bb - q * rho * sv * alpha + 2.0 * (c * alpha - lmt) * ab;
    let d_cb = -s * ab - 0.5 * d * bb * bb + (c * alpha - lmt) * bb;
    [d_at, d_bt, d_ab, d_bb, d_cb]
}

/// Integrate the coefficient ODEs backwards from zero terminal values with RK4.
pub fn solve_value_coeffs_logou(field: &YField, p: f64, grid: &TimeGrid, form: CoefficientForm) -> Result<ValueCoeffs> {
    grid.validate()?;
    let q = power_q(p)?;
    if field.mode == ThetaMode::TimeVarying {
        let path = field.theta_path.as_ref().expect("time-varying field carries a path");
        if !(path.grid.contains(grid.t0) && path.grid.contains(grid.horizon)) {
            return Err(Error::Range { t: grid.t0, t0: path.grid.t0, t1: path.grid.horizon });
        }
    }
    let horizon = grid.horizon;
    let f = |t: f64, y: &[f64; 5]| coeff_rhs(field, q, form, horizon, t, y);
    let n = grid.n_steps;
    let dt = grid.dt();
    let mut nodes = vec![[0.0; 5]; n + 1];
    let mut y = [0.0; 5];
    for i in (0..n).rev() {
        y = rk4_step(&f, grid.time(i + 1), &y, -dt);
        if !y.iter().all(|x| x.is_finite()) || y[2].abs() > 1e12 {
            return Err(Error::Integration(format!("value coefficients blew up at t = {}", grid.time(i))));
        }
        nodes[i] = y;
    }
    let deriv = (0..=n).map(|i| f(grid.time(i), &nodes[i])).collect();
    let col = |k: usize| nodes.iter().map(|y| y[k]).collect::<Vec<_>>();
    Ok(ValueCoeffs {
        grid: *grid,
        a_tilde: col(0),
        b_tilde: col(1),
        a_bar: col(2),
        b_bar: col(3),
        c_bar: col(4),
        deriv,
        p,
        q,
        form,
    })
}

/// `Φ(t, v, m)` and `DΦ = (∂_vΦ, ∂_mΦ)`.
pub fn phi_eval(coeffs: &ValueCoeffs, t: f64, v: f64, m: f64) -> Result<(f64, Vector2<f64>)> {
    let ([at, bt, ab, bb, cb], _) = coeffs.at(t)?;
    let tau = coeffs.horizon() - t;
    let phi = at * v + bt - v * tau - ab * m * m - bb * m - cb;
    Ok((phi, Vector2::new(at - tau, -2.0 * ab * m - bb)))
}

pub const VALUE_CSV_HEADER: [&str; 6] = ["t", "A_tilde", "B_tilde", "A_bar", "B_bar", "C_bar"];

pub fn write_value_coeffs_csv<W: Write>(coeffs: &ValueCoeffs, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VALUE_CSV_HEADER).map_err(csv_err)?;
    for i in 0..=coeffs.grid.n_steps {
        let row = coeffs.node(i);
        let mut rec = vec![coeffs.grid.time(i).to_string()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelParams;
    use nalgebra::Matrix2;

    fn grid() -> TimeGrid {
        TimeGrid::new(0.0, 1.0, 2000).unwrap()
    }

    fn zero_theta_field(params: &ModelParams) -> YField {
        YField::with_constant_theta(params, Matrix2::zeros()).unwrap()
    }

    #[test]
    fn terminal_values_are_zero() {
        let f = YField::stationary(&ModelParams::canonical_log_ou()).unwrap();
        for form in [CoefficientForm::Consistent, CoefficientForm::Printed] {
            let c = solve_value_coeffs_logou(&f, 0.5, &grid(), form).unwrap();
            assert_eq!(c.node(2000), [0.0; 5]);
            let (phi, d) = phi_eval(&c, 1.0, 0.7, -0.4).unwrap();
            assert_eq!((phi, d), (0.0, Vector2::zeros()));
        }
    }

    #[test]
    fn printed_a_tilde_closed_form() {
        let f = YField::stationary(&ModelParams::canonical_log_ou()).unwrap();
        let c = solve_value_coeffs_logou(&f, 0.5, &grid(), CoefficientForm::Printed).unwrap();
        assert!((c.a_tilde[0] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn consistent_a_tilde_is_time_to_go() {
        let f = YField::stationary(&ModelParams::canonical_log_ou()).unwrap();
        let c = solve_value_coeffs_logou(&f, 0.5, &grid(), CoefficientForm::Consistent).unwrap();
        for i in (0..=2000).step_by(100) {
            assert!((c.a_tilde[i] - (1.0 - c.grid.time(i))).abs() < 1e-12);
            assert!(c.b_tilde[i].abs() < 1e-12);
        }
    }

    #[test]
    fn a_bar_linear_closed_form() {
        let p = ModelParams::canonical_log_ou();
        let c = solve_value_coeffs_logou(&zero_theta_field(&p), 0.5, &grid(), CoefficientForm::Consistent).unwrap();
        let q: f64 = -1.0;
        let closed = q * (q - 1.0) * (1.0 - (-2.0 * p.lambda_mu).exp()) / (4.0 * p.lambda_mu);
        assert!((c.a_bar[0] - closed).abs() < 1e-12);
        assert!((closed - 0.632_121).abs() < 1e-6);
        // nonincreasing in t
        assert!(c.a_bar.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn a_bar_nonnegative() {
        for p in [0.1, 0.5, 0.9] {
            let f = YField::stationary(&ModelParams::canonical_log_ou()).unwrap();
            let c = solve_value_coeffs_logou(&f, p, &grid(), CoefficientForm::Consistent).unwrap();
            assert!(c.a_bar.iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn polynomial_evaluation() {
        let p = ModelParams::canonical_log_ou();
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let mut c = solve_value_coeffs_logou(&zero_theta_field(&p), 0.5, &g, CoefficientForm::Consistent).unwrap();
        for i in 0..5 {
            c.a_tilde[i] = 1.0 - g.time(i);
            c.b_tilde[i] = 0.0;
            c.a_bar[i] = 1.0;
            c.b_bar[i] = 0.0;
            c.c_bar[i] = 0.0;
            c.deriv[i] = [-1.0, 0.0, 0.0, 0.0, 0.0];
        }
        let (phi, d) = phi_eval(&c, 0.25, 0.4, 0.3).unwrap();
        assert!((phi + 0.09).abs() < 1e-15);
        assert!((d[1] + 0.6).abs() < 1e-15);
        assert!(matches!(phi_eval(&c, 1.2, 0.0, 0.0), Err(Error::Range { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let f = YField::stationary(&ModelParams::canonical_log_ou()).unwrap();
        for form in [CoefficientForm::Consistent, CoefficientForm::Printed] {
            let c = solve_value_coeffs_logou(&f, 0.5, &grid(), form).unwrap();
            let h = 1e-5;
            for &(t, v, m) in &[(0.1, -1.6, 0.2), (0.5, -1.0, -0.3), (0.93, -2.2, 0.05)] {
                let (_, d) = phi_eval(&c, t, v, m).unwrap();
                let fd_v = (phi_eval(&c, t, v + h, m).unwrap().0 - phi_eval(&c, t, v - h, m).unwrap().0) / (2.0 * h);
                let fd_m = (phi_eval(&c, t, v, m + h).unwrap().0 - phi_eval(&c, t, v, m - h).unwrap().0) / (2.0 * h);
                assert!((d[0] - fd_v).abs() <= 1e-8 && (d[1] - fd_m).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn merton_limit() {
        // constant drift, no filter noise: Φ(0) = −½q(q−1)Tm²
        let p = ModelParams { lambda_mu: 0.0, rho: 0.0, ..ModelParams::canonical_log_ou() };
        let c = solve_value_coeffs_logou(&zero_theta_field(&p), 0.5, &grid(), CoefficientForm::Consistent).unwrap();
        let m: f64 = 0.06;
        let (phi, _) = phi_eval(&c, 0.0, p.v0, m).unwrap();
        assert!((phi + 0.5 * 2.0 * m * m).abs() < 1e-12);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let f = YField::stationary(&ModelParams::canonical_log_ou()).unwrap();
        let c = solve_value_coeffs_logou(&f, 0.5, &TimeGrid::new(0.0, 1.0, 10).unwrap(), CoefficientForm::Consistent).unwrap();
        let mut buf = Vec::new();
        write_value_coeffs_csv(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,A_tilde,B_tilde,A_bar,B_bar,C_bar\n"));
        assert_eq!(text.lines().count(), 12);
    }
}

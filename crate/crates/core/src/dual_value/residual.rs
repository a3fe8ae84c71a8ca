use nalgebra::Vector2;

use super::{hamiltonian_power, phi_eval, ValueCoeffs, YField};
use crate::error::{Error, Result};

/// A candidate dual value `Φ(t, v, m)` on `[t0, t1]`.
pub trait ValueSurface {
    fn phi(&self, t: f64, v: f64, m: f64) -> Result<f64>;
    fn time_range(&self) -> (f64, f64);
}

impl ValueSurface for ValueCoeffs {
    fn phi(&self, t: f64, v: f64, m: f64) -> Result<f64> {
        phi_eval(self, t, v, m).map(|(phi, _)| phi)
    }

    fn time_range(&self) -> (f64, f64) {
        (self.grid.t0, self.grid.horizon)
    }
}

/// Wraps a closure as a [`ValueSurface`].
pub struct FnSurface<F> {
    pub f: F,
    pub t0: f64,
    pub t1: f64,
}

impl<F: Fn(f64, f64, f64) -> f64> ValueSurface for FnSurface<F> {
    fn phi(&self, t: f64, v: f64, m: f64) -> Result<f64> {
        Ok((self.f)(t, v, m))
    }

    fn time_range(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }
}

/// Finite-difference defect of the power-utility value PDE
/// `−Φ_t − ½Tr(ΣΣᵀD²Φ) + H(y, DΦ)` at `(t, v, m)`, central differences
/// of step `h` in every direction.
pub fn pde_residual<S: ValueSurface + ?Sized>(
    surface: &S,
    field: &YField,
    point: (f64, f64, f64),
    h: f64,
    p: f64,
) -> Result<f64> {
    let (t, v, m) = point;
    let (t0, t1) = surface.time_range();
    if !(h > 0.0) {
        return Err(Error::validation("h", "step must be positive"));
    }
    if t - h < t0 || t + h > t1 {
        return Err(Error::Range { t, t0: t0 + h, t1: t1 - h });
    }
    let f = |dt: f64, dv: f64, dm: f64| surface.phi(t + dt, v + dv, m + dm);
    let c = f(0.0, 0.0, 0.0)?;
    let phi_t = (f(h, 0.0, 0.0)? - f(-h, 0.0, 0.0)?) / (2.0 * h);
    let (vp, vm) = (f(0.0, h, 0.0)?, f(0.0, -h, 0.0)?);
    let (mp, mm) = (f(0.0, 0.0, h)?, f(0.0, 0.0, -h)?);
    let phi_v = (vp - vm) / (2.0 * h);
    let phi_m = (mp - mm) / (2.0 * h);
    let phi_vv = (vp - 2.0 * c + vm) / (h * h);
    let phi_mm = (mp - 2.0 * c + mm) / (h * h);
    let phi_vm = (f(0.0, h, h)? - f(0.0, h, -h)? - f(0.0, -h, h)? + f(0.0, -h, -h)?) / (4.0 * h * h);

    let s = field.sigma(t)?;
    let cov = s * s.transpose();
    let trace = cov[(0, 0)] * phi_vv + 2.0 * cov[(0, 1)] * phi_vm + cov[(1, 1)] * phi_mm;
    let ham = hamiltonian_power(field, t, (v, m), &Vector2::new(phi_v, phi_m), p)?;
    Ok(-phi_t - 0.5 * trace + ham)
}

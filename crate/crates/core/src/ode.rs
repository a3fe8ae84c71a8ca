//! Fixed-step Runge–Kutta integration for small state vectors.

/// One classical RK4 step of `y' = f(t, y)` from `t` with step `h`
/// (negative `h` integrates backwards).
pub fn rk4_step<const N: usize, F>(f: &F, t: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let axpy = |a: &[f64; N], k: &[f64; N], s: f64| -> [f64; N] {
        let mut out = *a;
        for i in 0..N {
            out[i] += s * k[i];
        }
        out
    };
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &axpy(y, &k1, 0.5 * h));
    let k3 = f(t + 0.5 * h, &axpy(y, &k2, 0.5 * h));
    let k4 = f(t + h, &axpy(y, &k3, h));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Cubic Hermite interpolation on `[t0, t0+h]` given values and slopes at both ends.
pub fn hermite(t0: f64, h: f64, y0: f64, d0: f64, y1: f64, d1: f64, t: f64) -> (f64, f64) {
    let s = (t - t0) / h;
    // snap grid-node queries so node values are returned exactly
    let s = if s.abs() < 1e-12 { 0.0 } else if (s - 1.0).abs() < 1e-12 { 1.0 } else { s };
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let value = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let dh00 = (6.0 * s2 - 6.0 * s) / h;
    let dh10 = 3.0 * s2 - 4.0 * s + 1.0;
    let dh01 = (-6.0 * s2 + 6.0 * s) / h;
    let dh11 = 3.0 * s2 - 2.0 * s;
    let slope = dh00 * y0 + dh10 * d0 + dh01 * y1 + dh11 * d1;
    (value, slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay_is_fourth_order() {
        let f = |_t: f64, y: &[f64; 1]| [-y[0]];
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let mut y = [1.0];
            for i in 0..n {
                y = rk4_step(&f, i as f64 * h, &y, h);
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let order = (err(20) / err(40)).log2();
        assert!(order > 3.9, "order {order}");
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let p = |t: f64| 1.0 + 2.0 * t - t * t + 0.5 * t * t * t;
        let dp = |t: f64| 2.0 - 2.0 * t + 1.5 * t * t;
        let (v, d) = hermite(0.3, 0.2, p(0.3), dp(0.3), p(0.5), dp(0.5), 0.41);
        assert!((v - p(0.41)).abs() < 1e-14);
        assert!((d - dp(0.41)).abs() < 1e-13);
    }
}

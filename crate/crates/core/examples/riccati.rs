//! Filter covariance: Riccati path, stationary limit and RK4 order.

use nalgebra::Matrix2;
use volfilter::filtering::{logou_filter_matrices, riccati_rhs, riccati_theta, stationary_theta};
use volfilter::{ModelParams, TimeGrid};

fn main() -> volfilter::Result<()> {
    let params = ModelParams::canonical_log_ou();
    let dyn_ = logou_filter_matrices(&params)?;
    let r = 1.0 / 3f64.sqrt();
    let theta0 = 0.04 * Matrix2::new(1.0, r, r, r * r);

    let (inf, change) = stationary_theta(&dyn_, &theta0)?;
    println!("theta_inf = {inf:.6}");
    println!("stationary residual {:.2e}, last change {change:.2e}", riccati_rhs(&dyn_, &inf).amax());
    println!("closed form s_inf = {:.6}", params.logou_stationary_variance());

    let end = |n| riccati_theta(&dyn_, &theta0, &TimeGrid::new(0.0, 1.0, n).unwrap()).unwrap().last();
    let (a, b, c) = (end(500), end(1000), end(2000));
    let order = ((a - b).amax() / (b - c).amax()).log2();
    println!("self-convergence order {order:.3}");
    Ok(())
}

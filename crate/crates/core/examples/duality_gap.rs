//! Closed-form primal values against Monte Carlo under the optimal policies.
//!
//! Run with `cargo run --release --example duality_gap -- [n_paths]`.

use volfilter::dual_value::{phi_eval, phi_log_logou, solve_value_coeffs_logou, CoefficientForm, YField};
use volfilter::portfolio::{mc_expected_utility, policy_log, policy_power, primal_value_closed, simulate_terminal_wealth, McSetup, DEFAULT_PI_MAX};
use volfilter::{ModelParams, TimeGrid, UtilitySpec};

fn main() -> volfilter::Result<()> {
    let n_paths = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let params = ModelParams::canonical_log_ou();
    let grid = TimeGrid::new(0.0, 1.0, 500)?;
    let field = YField::stationary(&params)?;
    let p = 0.5;

    let coeffs = solve_value_coeffs_logou(&field, p, &grid, CoefficientForm::Consistent)?;
    let (phi_pow, _) = phi_eval(&coeffs, 0.0, params.v0, params.m0)?;
    let phi_log = phi_log_logou(&field, grid.horizon, 0.0, (params.v0, params.m0))?;

    let setup = McSetup { params, grid, n_paths, seed: 2024, x0: 1.0, pi_max: DEFAULT_PI_MAX };
    let policies = [policy_log(&params), policy_power(&coeffs, &field)];
    let tw = simulate_terminal_wealth(&setup, &policies)?;

    for (k, pol) in policies.iter().enumerate() {
        let phi0 = if k == 0 { phi_log } else { phi_pow };
        let closed = primal_value_closed(setup.x0, &pol.utility, phi0);
        let mc = mc_expected_utility(&tw.terminal[k], &pol.utility, setup.seed)?;
        let name = match pol.utility {
            UtilitySpec::Log => "log".to_string(),
            UtilitySpec::Power { p } => format!("power p={p}"),
        };
        println!(
            "{name:>12}: closed {closed:.6}  mc {:.6} ± {:.6}  z {:+.2}  clipped {}",
            mc.estimate,
            mc.stderr,
            mc.z_score(closed),
            tw.clipped[k]
        );
    }
    Ok(())
}

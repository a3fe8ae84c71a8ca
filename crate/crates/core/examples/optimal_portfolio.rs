//! Optimal log and power fractions along one filtered path.

use volfilter::dual_value::{solve_value_coeffs_logou, CoefficientForm, YField};
use volfilter::filtering::{filter_prior, kalman_bucy_run, signal_dynamics};
use volfilter::portfolio::{policy_log, policy_power, wealth_on_path, DEFAULT_PI_MAX};
use volfilter::sde_sim::{observed_brownians, simulate_path, SimOptions};
use volfilter::{ModelParams, TimeGrid};

fn main() -> volfilter::Result<()> {
    let params = ModelParams::canonical_log_ou();
    let grid = TimeGrid::new(0.0, 1.0, 500)?;
    let field = YField::stationary(&params)?;
    let coeffs = solve_value_coeffs_logou(&field, 0.5, &grid, CoefficientForm::Consistent)?;
    let log = policy_log(&params);
    let power = policy_power(&coeffs, &field);

    let path = simulate_path(&params, &grid, 3, 0, SimOptions::default())?;
    let (o1, o2) = observed_brownians(&path, &params)?;
    let f = kalman_bucy_run(&signal_dynamics(&params)?, &o1, &o2, &grid, &filter_prior(&params)?)?;

    let wl = wealth_on_path(&path, &f, &log, 1.0, DEFAULT_PI_MAX)?;
    let wp = wealth_on_path(&path, &f, &power, 1.0, DEFAULT_PI_MAX)?;
    println!("   t    mu_bar   pi_log  pi_power");
    for i in (0..grid.n_steps).step_by(100) {
        println!("{:.2}  {:+.4}  {:+.4}  {:+.4}", grid.time(i), f.mu_bar[i], wl.pi[i], wp.pi[i]);
    }
    println!("terminal wealth: log {:.4}, power {:.4}", wl.terminal(), wp.terminal());
    Ok(())
}

//! Exact filter for the risk premia on one simulated path.

use volfilter::filtering::{filter_prior, innovations, kalman_bucy_run, signal_dynamics};
use volfilter::models::risks_from_state;
use volfilter::sde_sim::{observed_brownians, simulate_path, SimOptions};
use volfilter::{ModelParams, TimeGrid};

fn main() -> volfilter::Result<()> {
    let params = ModelParams::canonical_log_ou();
    let grid = TimeGrid::new(0.0, 1.0, 1000)?;
    let path = simulate_path(&params, &grid, 11, 0, SimOptions::default())?;
    let (o1, o2) = observed_brownians(&path, &params)?;

    let f = kalman_bucy_run(&signal_dynamics(&params)?, &o1, &o2, &grid, &filter_prior(&params)?)?;
    for i in (0..=grid.n_steps).step_by(200) {
        let (mu, beta) = risks_from_state(&params, path.v[i], path.mu[i], path.beta[i])?;
        println!(
            "t={:.2}  mu~={mu:+.4} mu_bar={:+.4}   beta~={beta:+.4} beta_bar={:+.4}",
            grid.time(i),
            f.mu_bar[i],
            f.beta_bar[i]
        );
    }
    let (d1, _) = innovations(&f, &o1, &o2)?;
    let qv: f64 = d1.iter().map(|x| x * x).sum();
    println!("innovation quadratic variation {qv:.4} (horizon 1)");
    println!("theta(T) = {:.5}", f.theta.last());
    Ok(())
}

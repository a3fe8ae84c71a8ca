//! Particle filter on the Garch factor model against the exact linear filter.

use volfilter::filtering::{filter_prior, kalman_bucy_run, particle_ks_run, signal_dynamics, ParticleOptions};
use volfilter::sde_sim::{observed_brownians, simulate_path, SimOptions};
use volfilter::{ModelParams, TimeGrid};

fn main() -> volfilter::Result<()> {
    let params = ModelParams::canonical_garch();
    let grid = TimeGrid::new(0.0, 1.0, 500)?;
    let path = simulate_path(&params, &grid, 5, 0, SimOptions::default())?;
    let (o1, o2) = observed_brownians(&path, &params)?;
    let dyn_ = signal_dynamics(&params)?;
    let prior = filter_prior(&params)?;

    let kb = kalman_bucy_run(&dyn_, &o1, &o2, &grid, &prior)?;
    for n in [100, 1000, 10_000] {
        let (pf, cloud) = particle_ks_run(&dyn_, &o1, &o2, &grid, &prior, &ParticleOptions::new(n, 99))?;
        let n_t = grid.n_steps;
        println!(
            "N={n:>6}: mu_bar {:+.5} (KB {:+.5})  beta_bar {:+.5} (KB {:+.5})  ess {:.0}",
            pf.mu_bar[n_t], kb.mu_bar[n_t], pf.beta_bar[n_t], kb.beta_bar[n_t], cloud.ess
        );
    }
    Ok(())
}

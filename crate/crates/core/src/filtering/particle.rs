use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{FilterOutput, Prior, RiccatiPath, SignalDynamics};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rng::{derive_seed, substream, Domain, StreamRng};
use crate::stats::pairwise_sum;

/// Weighted particle approximation of the conditional law of `X`.
///
/// Every particle carries a stable id; its propagation noise comes from the
/// id's own substream, so the output does not depend on storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub ids: Vec<u64>,
    pub states: Vec<Vector2<f64>>,
    pub weights: Vec<f64>,
    pub ess: f64,
}

impl ParticleCloud {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn mean(&self) -> Vector2<f64> {
        let m0: Vec<f64> = self.states.iter().zip(&self.weights).map(|(x, w)| w * x[0]).collect();
        let m1: Vec<f64> = self.states.iter().zip(&self.weights).map(|(x, w)| w * x[1]).collect();
        Vector2::new(pairwise_sum(&m0), pairwise_sum(&m1))
    }

    pub fn covariance(&self) -> Matrix2<f64> {
        let m = self.mean();
        let mut c = [Vec::with_capacity(self.len()), Vec::with_capacity(self.len()), Vec::with_capacity(self.len())];
        for (x, w) in self.states.iter().zip(&self.weights) {
            let d = x - m;
            c[0].push(w * d[0] * d[0]);
            c[1].push(w * d[0] * d[1]);
            c[2].push(w * d[1] * d[1]);
        }
        let (a, b, d) = (pairwise_sum(&c[0]), pairwise_sum(&c[1]), pairwise_sum(&c[2]));
        Matrix2::new(a, b, b, d)
    }

    /// Sort particles by id (canonical order).
    fn canonicalise(&mut self) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.ids[i]);
        self.ids = order.iter().map(|&i| self.ids[i]).collect();
        self.states = order.iter().map(|&i| self.states[i]).collect();
        self.weights = order.iter().map(|&i| self.weights[i]).collect();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleOptions {
    pub n_particles: usize,
    pub seed: u64,
    /// Resample when `ess < threshold·N`.
    pub resample_threshold: f64,
    /// `false` replaces the observation function by zero (diagnostic).
    pub observation_coupling: bool,
}

impl ParticleOptions {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self { n_particles, seed, resample_threshold: 0.5, observation_coupling: true }
    }
}

fn psd_sqrt(m: &Matrix2<f64>) -> Matrix2<f64> {
    let eig = SymmetricEigen::new(*m);
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * Matrix2::from_diagonal(&d) * eig.eigenvectors.transpose()
}

fn noise_stream(seed: u64, id: u64) -> StreamRng {
    substream(derive_seed(seed, 1), Domain::Particles, id)
}

/// Draw the initial cloud from a Gaussian prior; particle `i` gets id `i`.
pub fn sample_prior_cloud(prior: &Prior, n: usize, seed: u64) -> ParticleCloud {
    let l = psd_sqrt(&prior.cov);
    let states = (0..n as u64)
        .map(|id| {
            let mut rng = substream(derive_seed(seed, 0), Domain::Particles, id);
            let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            prior.mean + l * z
        })
        .collect();
    ParticleCloud {
        ids: (0..n as u64).collect(),
        states,
        weights: vec![1.0 / n as f64; n],
        ess: n as f64,
    }
}

/// Particle filter started from a Gaussian prior.
pub fn particle_ks_run(
    dyn_: &SignalDynamics,
    obs1: &[f64],
    obs2: &[f64],
    grid: &TimeGrid,
    prior: &Prior,
    opts: &ParticleOptions,
) -> Result<(FilterOutput, ParticleCloud)> {
    if opts.n_particles < 1 {
        return Err(Error::validation("n_particles", "must be at least 1"));
    }
    let cloud = sample_prior_cloud(prior, opts.n_particles, opts.seed);
    particle_ks_run_from_cloud(dyn_, obs1, obs2, grid, cloud, opts)
}

/// Particle filter started from an explicit cloud.
///
/// Per step, with `X` the state before propagation:
/// log-weight `+= X·ΔY − ½|X|²Δt`, then
/// `X ← X + (AX + b)Δt + GΔM + B(ΔY − XΔt)`;
/// systematic resampling when the effective sample size drops below the
/// threshold.
pub fn particle_ks_run_from_cloud(
    dyn_: &SignalDynamics,
    obs1: &[f64],
    obs2: &[f64],
    grid: &TimeGrid,
    mut cloud: ParticleCloud,
    opts: &ParticleOptions,
) -> Result<(FilterOutput, ParticleCloud)> {
    let n = grid.n_steps;
    if obs1.len() != n || obs2.len() != n {
        return Err(Error::Dimension(format!(
            "grid has {n} steps, observations have {} and {}",
            obs1.len(),
            obs2.len()
        )));
    }
    if cloud.is_empty() {
        return Err(Error::validation("n_particles", "cloud is empty"));
    }
    cloud.canonicalise();
    let np = cloud.len();
    let dt = grid.dt();
    let sdt = dt.sqrt();
    let mut rngs: Vec<StreamRng> = cloud.ids.iter().map(|&id| noise_stream(opts.seed, id)).collect();
    let mut resample_rng = substream(opts.seed, Domain::Particles, u64::MAX);
    let mut next_id = cloud.ids.iter().max().map_or(0, |m| m + 1);
    let mut log_w: Vec<f64> = cloud.weights.iter().map(|w| w.ln()).collect();

    let mut out = FilterOutput {
        grid: *grid,
        mu_bar: Vec::with_capacity(n + 1),
        beta_bar: Vec::with_capacity(n + 1),
        theta: RiccatiPath { grid: *grid, theta: Vec::with_capacity(n + 1), deriv: vec![Matrix2::zeros(); n + 1] },
        dwbar1: Vec::with_capacity(n),
        dwbar2: Vec::with_capacity(n),
    };
    let record = |out: &mut FilterOutput, cloud: &ParticleCloud| {
        let m = cloud.mean();
        out.mu_bar.push(m[0]);
        out.beta_bar.push(m[1]);
        out.theta.theta.push(cloud.covariance());
    };
    record(&mut out, &cloud);

    for step in 0..n {
        let dy = Vector2::new(obs1[step], obs2[step]);
        let m = Vector2::new(out.mu_bar[step], out.beta_bar[step]);
        out.dwbar1.push(dy[0] - m[0] * dt);
        out.dwbar2.push(dy[1] - m[1] * dt);

        for ((x, lw), rng) in cloud.states.iter_mut().zip(log_w.iter_mut()).zip(rngs.iter_mut()) {
            let h = if opts.observation_coupling { *x } else { Vector2::zeros() };
            *lw += h.dot(&dy) - 0.5 * h.norm_squared() * dt;
            let dm = Vector2::new(sdt * rng.sample::<f64, _>(StandardNormal), sdt * rng.sample::<f64, _>(StandardNormal));
            *x += dyn_.drift(x) * dt + dyn_.g * dm + dyn_.b_mat * (dy - h * dt);
        }

        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Degeneracy { step });
        }
        let unnorm: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total = pairwise_sum(&unnorm);
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degeneracy { step });
        }
        cloud.weights = unnorm.iter().map(|w| w / total).collect();
        let sq: Vec<f64> = cloud.weights.iter().map(|w| w * w).collect();
        cloud.ess = 1.0 / pairwise_sum(&sq);
        record(&mut out, &cloud);

        if cloud.ess < opts.resample_threshold * np as f64 {
            let u0: f64 = resample_rng.random::<f64>() / np as f64;
            let mut states = Vec::with_capacity(np);
            let mut ids = Vec::with_capacity(np);
            let mut new_rngs = Vec::with_capacity(np);
            let mut cum = cloud.weights[0];
            let mut j = 0;
            for k in 0..np {
                let u = u0 + k as f64 / np as f64;
                while u > cum && j + 1 < np {
                    j += 1;
                    cum += cloud.weights[j];
                }
                states.push(cloud.states[j]);
                ids.push(next_id);
                new_rngs.push(noise_stream(opts.seed, next_id));
                next_id += 1;
            }
            cloud.states = states;
            cloud.ids = ids;
            rngs = new_rngs;
            cloud.weights = vec![1.0 / np as f64; np];
            cloud.ess = np as f64;
        }
        log_w.iter_mut().zip(&cloud.weights).for_each(|(l, w)| *l = w.ln());
    }
    Ok((out, cloud))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::{filter_prior, garch_signal_dynamics, kalman_bucy_run, logou_filter_matrices};
    use crate::models::ModelParams;
    use crate::sde_sim::{observed_brownians, simulate_path, SimOptions};
    use proptest::prelude::*;

    fn setup(p: &ModelParams, n: usize, seed: u64) -> (SignalDynamics, Vec<f64>, Vec<f64>, TimeGrid, Prior) {
        let g = TimeGrid::new(0.0, 1.0, n).unwrap();
        let d = crate::filtering::signal_dynamics(p).unwrap();
        let path = simulate_path(p, &g, seed, 0, SimOptions::default()).unwrap();
        let (o1, o2) = observed_brownians(&path, p).unwrap();
        (d, o1, o2, g, filter_prior(p).unwrap())
    }

    #[test]
    fn uncoupled_weights_stay_uniform() {
        let (d, o1, o2, g, pr) = setup(&ModelParams::canonical_log_ou(), 50, 1);
        let opts = ParticleOptions { observation_coupling: false, ..ParticleOptions::new(64, 3) };
        let (_, cloud) = particle_ks_run(&d, &o1, &o2, &g, &pr, &opts).unwrap();
        assert!(cloud.weights.iter().all(|&w| (w - 1.0 / 64.0).abs() < 1e-15));
        assert_eq!(cloud.ess, 64.0);
    }

    #[test]
    fn single_particle_is_its_own_mean() {
        let (d, o1, o2, g, pr) = setup(&ModelParams::canonical_garch(), 40, 2);
        let (out, cloud) = particle_ks_run(&d, &o1, &o2, &g, &pr, &ParticleOptions::new(1, 5)).unwrap();
        assert_eq!(cloud.ess, 1.0);
        assert_eq!(out.mu_bar[40], cloud.states[0][0]);
        assert_eq!(out.beta_bar[40], cloud.states[0][1]);
    }

    #[test]
    fn weights_normalised_and_ess_bounded() {
        let (d, o1, o2, g, pr) = setup(&ModelParams::canonical_garch(), 100, 7);
        let opts = ParticleOptions { resample_threshold: 0.0, ..ParticleOptions::new(200, 1) };
        let (_, cloud) = particle_ks_run(&d, &o1, &o2, &g, &pr, &opts).unwrap();
        assert!((cloud.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(cloud.ess >= 1.0 && cloud.ess <= 200.0);
    }

    #[test]
    fn degenerate_weights_are_reported() {
        let (d, _, _, g, pr) = setup(&ModelParams::canonical_garch(), 10, 7);
        let huge = vec![f64::INFINITY; 10];
        let err = particle_ks_run(&d, &huge, &huge, &g, &pr, &ParticleOptions::new(10, 1)).unwrap_err();
        assert!(matches!(err, Error::Degeneracy { step: 0 }));
    }

    #[test]
    fn garch_particle_tracks_exact_filter() {
        // the Garch signal is linear-Gaussian too, so Kalman–Bucy is exact
        let p = ModelParams::canonical_garch();
        let (d, o1, o2, g, pr) = setup(&p, 200, 13);
        let kb = kalman_bucy_run(&d, &o1, &o2, &g, &pr).unwrap();
        let (pf, _) = particle_ks_run(&d, &o1, &o2, &g, &pr, &ParticleOptions::new(4000, 2)).unwrap();
        let sd = kb.theta.last()[(0, 0)].sqrt();
        assert!((pf.mu_bar[200] - kb.mu_bar[200]).abs() < 5.0 * sd / 4000f64.sqrt() * 3.0);
        let sd_b = kb.theta.last()[(1, 1)].sqrt();
        assert!((pf.beta_bar[200] - kb.beta_bar[200]).abs() < 5.0 * sd_b / 4000f64.sqrt() * 3.0);
    }

    #[test]
    fn logou_particle_tracks_exact_filter() {
        let p = ModelParams::canonical_log_ou();
        let (d, o1, o2, g, pr) = setup(&p, 200, 4);
        assert_eq!(d, logou_filter_matrices(&p).unwrap());
        let kb = kalman_bucy_run(&d, &o1, &o2, &g, &pr).unwrap();
        let (pf, _) = particle_ks_run(&d, &o1, &o2, &g, &pr, &ParticleOptions::new(4000, 9)).unwrap();
        let sd = kb.theta.last()[(0, 0)].sqrt();
        assert!((pf.mu_bar[200] - kb.mu_bar[200]).abs() < 15.0 * sd / 4000f64.sqrt());
        let _ = garch_signal_dynamics(&ModelParams::canonical_garch()).unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn exchangeable_under_permutation(seed in any::<u64>(), rot in 0usize..50) {
            let (d, o1, o2, g, pr) = setup(&ModelParams::canonical_garch(), 30, 3);
            let opts = ParticleOptions::new(50, seed);
            let cloud = sample_prior_cloud(&pr, 50, seed);
            let mut perm = cloud.clone();
            perm.ids.rotate_left(rot);
            perm.states.rotate_left(rot);
            perm.weights.rotate_left(rot);
            perm.ids.reverse();
            perm.states.reverse();
            perm.weights.reverse();
            let (a, _) = particle_ks_run_from_cloud(&d, &o1, &o2, &g, cloud, &opts).unwrap();
            let (b, _) = particle_ks_run_from_cloud(&d, &o1, &o2, &g, perm, &opts).unwrap();
            prop_assert_eq!(a.mu_bar, b.mu_bar);
            prop_assert_eq!(a.beta_bar, b.beta_bar);
        }
    }
}

//! Deterministic reductions and Monte Carlo summaries.

use rand::Rng;
use serde::Serialize;

use crate::rng::{substream, Domain};

const LEAF: usize = 16;

/// Pairwise summation with a fixed split tree: the result depends only on
/// the slice contents, never on thread scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (divisor n−1); zero for fewer than two samples.
pub fn sample_var(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (n - 1) as f64
}

pub fn sample_cov(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(&xs[..n]), mean(&ys[..n]));
    let prod: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    pairwise_sum(&prod) / (n - 1) as f64
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCReport {
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed: u64,
}

impl MCReport {
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let n = samples.len();
        let stderr = if n > 1 { (sample_var(samples) / n as f64).sqrt() } else { 0.0 };
        Self { estimate: mean(samples), stderr, n, seed }
    }

    /// |estimate − target| in units of stderr; 0 when both are exact.
    pub fn z_score(&self, target: f64) -> f64 {
        let gap = (self.estimate - target).abs();
        if self.stderr > 0.0 {
            gap / self.stderr
        } else if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Nonparametric bootstrap standard error of `stat` over rows of `data`.
pub fn bootstrap_se<T, F>(data: &[T], n_boot: usize, seed: u64, stat: F) -> f64
where
    T: Clone,
    F: Fn(&[T]) -> f64,
{
    let n = data.len();
    if n < 2 || n_boot < 2 {
        return 0.0;
    }
    let mut rng = substream(seed, Domain::Bootstrap, 0);
    let mut buf = Vec::with_capacity(n);
    let stats: Vec<f64> = (0..n_boot)
        .map(|_| {
            buf.clear();
            for _ in 0..n {
                buf.push(data[rng.random_range(0..n)].clone());
            }
            stat(&buf)
        })
        .collect();
    sample_var(&stats).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_report() {
        let r = MCReport::from_samples(&[0.0, 2.0], 1);
        assert_eq!(r.estimate, 1.0);
        assert!((r.stderr - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_samples_have_zero_stderr() {
        let r = MCReport::from_samples(&[3.0; 10], 0);
        assert_eq!(r.stderr, 0.0);
        assert_eq!(r.z_score(3.0), 0.0);
    }

    #[test]
    fn bootstrap_se_of_mean_is_close_to_analytic() {
        let xs: Vec<f64> = (0..400).map(|i| (i % 7) as f64).collect();
        let se = bootstrap_se(&xs, 500, 9, mean);
        let analytic = (sample_var(&xs) / xs.len() as f64).sqrt();
        assert!((se / analytic - 1.0).abs() < 0.15);
    }

    proptest! {
        #[test]
        fn pairwise_matches_naive(xs in proptest::collection::vec(-1e3f64..1e3, 0..300)) {
            let naive: f64 = xs.iter().sum();
            prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid `t0 = t_0 < t_1 < … < t_n = horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    #[serde(default)]
    pub t0: f64,
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, n_steps: usize) -> Result<Self> {
        let grid = Self { t0, horizon, n_steps };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.horizon.is_finite()) || self.horizon <= self.t0 {
            return Err(Error::validation("grid", "horizon must exceed t0"));
        }
        if self.n_steps == 0 {
            return Err(Error::validation("grid", "n_steps must be at least 1"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (self.horizon - self.t0) / self.n_steps as f64
    }

    /// Time of node `i`; the last node is pinned to `horizon` exactly.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            self.t0 + i as f64 * self.dt()
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.time(i)).collect()
    }

    pub fn contains(&self, t: f64) -> bool {
        let slack = 1e-12 * (1.0 + self.horizon.abs());
        t >= self.t0 - slack && t <= self.horizon + slack
    }

    /// Index of the interval containing `t` (clamped to the last interval).
    pub(crate) fn locate(&self, t: f64) -> usize {
        let raw = ((t - self.t0) / self.dt()).floor();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.n_steps - 1)
        }
    }

    /// Same horizon, `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self { n_steps: self.n_steps * factor, ..*self }
    }
}

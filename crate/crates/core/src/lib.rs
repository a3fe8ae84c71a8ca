//! Filtering and optimal investment under partial information for
//! stochastic-volatility markets.
//!
//! The pipeline runs in four stages, each in its own module:
//!
//! 1. [`sde_sim`] simulates the full-information system `(S, V, μ, β)` and
//!    recovers the observation Brownians `(W̃¹, W̃²)` from price and
//!    volatility paths.
//! 2. [`filtering`] estimates the unobservable risk premia `(μ̄, β̄)`: an exact
//!    correlated Kalman–Bucy filter with its matrix Riccati covariance, and a
//!    weighted particle filter for the nonlinear/Garch case.
//! 3. [`dual_value`] solves the dual control problem for the Log
//!    Ornstein–Uhlenbeck model in closed form and exposes the Hamiltonian,
//!    the optimal dual control and finite-difference PDE residuals.
//! 4. [`portfolio`] turns value functions into log/power policies, simulates
//!    wealth and estimates expected utility by Monte Carlo.
//!
//! [`harness`] wires the stages together behind a TOML config, writes CSV
//! artifacts and runs the verification checks.

pub mod dual_value;
pub mod error;
pub mod filtering;
pub mod grid;
pub mod harness;
pub mod models;
pub mod ode;
pub mod portfolio;
pub mod rng;
pub mod sde_sim;
pub mod stats;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use models::{ModelKind, ModelParams, UtilitySpec};

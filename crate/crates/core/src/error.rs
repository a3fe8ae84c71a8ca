use thiserror::Error;

/// Errors raised across the pipeline. Each variant corresponds to a failure
/// class the callers need to tell apart (bad input vs. numerical breakdown).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Validation { field: &'static str, reason: String },

    #[error("state outside the model's admissible domain: {0}")]
    Domain(String),

    #[error("operation not available for model kind {0}")]
    Kind(String),

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("insufficient data: need {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("particle weights degenerated at step {step}")]
    Degeneracy { step: usize },

    #[error("Riccati path not stationary: last-step change {change:e} exceeds {tol:e}")]
    NotConverged { change: f64, tol: f64 },

    #[error("time {t} outside [{t0}, {t1}]")]
    Range { t: f64, t0: f64, t1: f64 },

    #[error("dual objective is not unimodal on the search bracket")]
    Convexity,

    #[error("K₂ pairing vanishes; cannot map ν to π")]
    SingularPairing,

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn validation(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation { field, reason: reason.into() }
    }

    /// Tag an error with the pipeline stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// Configuration and parameter errors, as opposed to runtime failures.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Validation { .. } | Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}

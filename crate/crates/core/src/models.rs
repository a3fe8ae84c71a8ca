//! Model catalog: coefficient functions and the risk-premium maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    LogOU,
    GarchFactor,
    Heston,
    SteinStein,
}

impl ModelKind {
    /// Factor-form models carry the drift as `μ·g(V)`, so `μ̃ = μ`.
    pub fn is_factor_form(self) -> bool {
        matches!(self, ModelKind::LogOU | ModelKind::GarchFactor)
    }

    pub fn is_filterable(self) -> bool {
        self.is_factor_form()
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Parameters of one stochastic-volatility market.
///
/// `sigma0`/`sigma1` are variances of the Gaussian priors on `μ₀`/`β₀`.
/// The β-process fields are only read for [`ModelKind::GarchFactor`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub lambda_v: f64,
    pub theta: f64,
    pub sigma_v: f64,
    pub lambda_mu: f64,
    pub theta_mu: f64,
    pub sigma_mu: f64,
    #[serde(default)]
    pub lambda_beta: f64,
    #[serde(default)]
    pub sigma_beta: f64,
    pub rho: f64,
    pub m0: f64,
    pub sigma0: f64,
    #[serde(default)]
    pub m1: f64,
    #[serde(default)]
    pub sigma1: f64,
    #[serde(default = "one")]
    pub s0: f64,
    pub v0: f64,
    /// LogOU only: the volatility reverts to the current drift, `θ = μ_t`.
    #[serde(default)]
    pub mean_coupled: bool,
}

fn one() -> f64 {
    1.0
}

impl ModelParams {
    /// Reference Log-OU market used throughout the examples and tests.
    ///
    /// The prior variance is the stationary filter variance, so the filter
    /// covariance is constant in time from the start.
    pub fn canonical_log_ou() -> Self {
        let mut p = Self {
            kind: ModelKind::LogOU,
            lambda_v: 1.0,
            theta: 0.2f64.ln(),
            sigma_v: 0.2,
            lambda_mu: 0.5,
            theta_mu: 0.1,
            sigma_mu: 0.3,
            lambda_beta: 0.0,
            sigma_beta: 0.0,
            rho: -0.5,
            m0: 0.2,
            sigma0: 0.0,
            m1: 0.0,
            sigma1: 0.0,
            s0: 1.0,
            v0: 0.2f64.ln(),
            mean_coupled: false,
        };
        p.sigma0 = p.logou_stationary_variance();
        p
    }

    /// Reference Garch factor market (`θ = 0`, mean-reverting β).
    pub fn canonical_garch() -> Self {
        Self {
            kind: ModelKind::GarchFactor,
            lambda_v: 0.0,
            theta: 0.0,
            sigma_v: 0.3,
            lambda_mu: 0.5,
            theta_mu: 0.1,
            sigma_mu: 0.3,
            lambda_beta: -0.5,
            sigma_beta: 0.1,
            rho: -0.5,
            m0: 0.2,
            sigma0: 0.01,
            m1: 0.5,
            sigma1: 0.01,
            s0: 1.0,
            v0: 0.04,
            mean_coupled: false,
        }
    }

    pub fn rho_bar(&self) -> f64 {
        (1.0 - self.rho * self.rho).sqrt()
    }

    /// Stationary variance `s∞` of the Log-OU filter for `μ̃`; the full
    /// stationary covariance is `s∞·[[1, r], [r, r²]]` with `r = −ρ/ρ̄`.
    pub fn logou_stationary_variance(&self) -> f64 {
        let rb2 = 1.0 - self.rho * self.rho;
        let l = self.lambda_mu;
        if self.sigma_mu == 0.0 {
            return 0.0;
        }
        rb2 * (-l + (l * l + self.sigma_mu * self.sigma_mu / rb2).sqrt())
    }
}

/// Utility of terminal wealth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum UtilitySpec {
    Log,
    Power { p: f64 },
}

impl UtilitySpec {
    pub fn power(p: f64) -> Result<Self> {
        let u = UtilitySpec::Power { p };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilitySpec::Log => Ok(()),
            UtilitySpec::Power { p } if p > 0.0 && p < 1.0 => Ok(()),
            UtilitySpec::Power { .. } => Err(Error::validation("p", "power exponent must lie in (0, 1)")),
        }
    }

    /// Conjugate exponent `q = p/(p−1)`; `None` for log utility.
    pub fn q(&self) -> Option<f64> {
        match *self {
            UtilitySpec::Log => None,
            UtilitySpec::Power { p } => Some(p / (p - 1.0)),
        }
    }

    pub fn utility(&self, x: f64) -> f64 {
        match *self {
            UtilitySpec::Log => x.ln(),
            UtilitySpec::Power { p } => x.powf(p) / p,
        }
    }

    /// Convex dual `Ũ(z) = sup_x (U(x) − xz)`.
    pub fn dual(&self, z: f64) -> f64 {
        match *self {
            UtilitySpec::Log => -1.0 - z.ln(),
            UtilitySpec::Power { p } => {
                let q = p / (p - 1.0);
                -z.powf(q) / q
            }
        }
    }
}

/// Volatility coefficients `(g(v), k(v))` of price and volatility noise.
pub fn model_coefficients(params: &ModelParams, v: f64) -> Result<(f64, f64)> {
    if !v.is_finite() {
        return Err(Error::Domain(format!("volatility state {v} is not finite")));
    }
    let (g, k) = match params.kind {
        ModelKind::LogOU => (v.exp(), params.sigma_v),
        ModelKind::GarchFactor => {
            if v <= 0.0 {
                return Err(Error::Domain(format!("Garch volatility state {v} must be positive")));
            }
            (v.sqrt(), params.sigma_v * v)
        }
        ModelKind::Heston => {
            if v <= 0.0 {
                return Err(Error::Domain(format!("Heston variance {v} must be positive")));
            }
            (v.sqrt(), params.sigma_v * v.sqrt())
        }
        ModelKind::SteinStein => {
            if v == 0.0 {
                return Err(Error::Domain("Stein-Stein volatility vanishes at v = 0".into()));
            }
            (v.abs(), params.sigma_v)
        }
    };
    if !(g > 0.0 && g.is_finite() && k > 0.0 && k.is_finite()) {
        return Err(Error::Domain(format!("coefficients g={g}, k={k} not strictly positive at v={v}")));
    }
    Ok((g, k))
}

/// Drift `f` of the volatility state. `mu` matters only for the
/// mean-coupled Log-OU variant, `beta` only for the Garch model.
pub fn vol_drift(params: &ModelParams, v: f64, mu: f64, beta: f64) -> f64 {
    match params.kind {
        ModelKind::GarchFactor => beta * (params.theta - v),
        ModelKind::LogOU if params.mean_coupled => params.lambda_v * (mu - v),
        _ => params.lambda_v * (params.theta - v),
    }
}

/// Market prices of risk `(μ̃, β̃)` at state `(v, μ, β)`.
pub fn risks_from_state(params: &ModelParams, v: f64, mu: f64, beta: f64) -> Result<(f64, f64)> {
    let (g, k) = model_coefficients(params, v)?;
    let mu_tilde = if params.kind.is_factor_form() { mu } else { mu / g };
    let f = vol_drift(params, v, mu, beta);
    let beta_tilde = (f - params.rho * k * mu_tilde) / (params.rho_bar() * k);
    Ok((mu_tilde, beta_tilde))
}

/// Inverse of [`risks_from_state`] for Log-OU: recovers `V` from `(μ̃, β̃)`.
pub fn logou_v_from_risks(params: &ModelParams, mu_tilde: f64, beta_tilde: f64) -> Result<f64> {
    if params.kind != ModelKind::LogOU {
        return Err(Error::Kind(params.kind.to_string()));
    }
    if params.lambda_v == 0.0 {
        return Err(Error::Domain("λ_V = 0: V is not identified by the risks".into()));
    }
    let level = if params.mean_coupled { mu_tilde } else { params.theta };
    let s = params.sigma_v / params.lambda_v;
    Ok(level - s * params.rho_bar() * beta_tilde - s * params.rho * mu_tilde)
}

pub fn validate_params(params: ModelParams) -> Result<ModelParams> {
    let p = &params;
    let finite = [
        ("lambda_v", p.lambda_v),
        ("theta", p.theta),
        ("sigma_v", p.sigma_v),
        ("lambda_mu", p.lambda_mu),
        ("theta_mu", p.theta_mu),
        ("sigma_mu", p.sigma_mu),
        ("lambda_beta", p.lambda_beta),
        ("sigma_beta", p.sigma_beta),
        ("rho", p.rho),
        ("m0", p.m0),
        ("sigma0", p.sigma0),
        ("m1", p.m1),
        ("sigma1", p.sigma1),
        ("s0", p.s0),
        ("v0", p.v0),
    ];
    for (name, x) in finite {
        if !x.is_finite() {
            return Err(Error::validation(name, "must be finite"));
        }
    }
    if p.rho.abs() >= 1.0 {
        return Err(Error::validation("rho", "|rho| must be strictly below 1"));
    }
    if p.sigma_v <= 0.0 {
        return Err(Error::validation("sigma_v", "must be positive"));
    }
    let nonneg = [
        ("lambda_v", p.lambda_v),
        ("lambda_mu", p.lambda_mu),
        ("sigma_mu", p.sigma_mu),
        ("sigma_beta", p.sigma_beta),
        ("sigma0", p.sigma0),
        ("sigma1", p.sigma1),
    ];
    for (name, x) in nonneg {
        if x < 0.0 {
            return Err(Error::validation(name, "must be nonnegative"));
        }
    }
    if p.s0 <= 0.0 {
        return Err(Error::validation("s0", "initial price must be positive"));
    }
    if p.kind == ModelKind::GarchFactor && p.theta != 0.0 {
        return Err(Error::validation("theta", "GarchFactor requires theta = 0"));
    }
    if p.mean_coupled && p.kind != ModelKind::LogOU {
        return Err(Error::validation("mean_coupled", "only defined for LogOU"));
    }
    model_coefficients(p, p.v0).map_err(|e| Error::validation("v0", e.to_string()))?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logou(lambda_v: f64, theta: f64, sigma_v: f64, rho: f64) -> ModelParams {
        ModelParams { lambda_v, theta, sigma_v, rho, ..ModelParams::canonical_log_ou() }
    }

    #[test]
    fn coefficients_per_model() {
        let p = ModelParams::canonical_log_ou();
        assert_eq!(model_coefficients(&p, 0.0).unwrap(), (1.0, p.sigma_v));

        let h = ModelParams { kind: ModelKind::Heston, sigma_v: 0.3, v0: 0.04, ..p };
        let (g, k) = model_coefficients(&h, 0.04).unwrap();
        assert!((g - 0.2).abs() < 1e-15 && (k - 0.06).abs() < 1e-15);
        assert!(matches!(model_coefficients(&h, -0.01), Err(Error::Domain(_))));

        let s = ModelParams { kind: ModelKind::SteinStein, ..p };
        assert_eq!(model_coefficients(&s, -0.3).unwrap().0, 0.3);
        assert!(model_coefficients(&s, 0.0).is_err());
    }

    #[test]
    fn risks_examples() {
        let p = logou(1.0, 0.0, 0.2, 0.0);
        assert_eq!(risks_from_state(&p, 0.0, 0.1, 0.0).unwrap(), (0.1, 0.0));

        let p = logou(1.0, 0.0, 0.2, -0.5);
        let (_, bt) = risks_from_state(&p, 0.1, 0.05, 0.0).unwrap();
        let rb = 0.75f64.sqrt();
        let oracle = -0.1 / (0.2 * rb) + 0.5 / rb * 0.05;
        assert!((bt - oracle).abs() < 1e-14);
        assert!((bt + 0.54848).abs() < 1e-5);

        let g = ModelParams { sigma_v: 0.3, rho: 0.0, ..ModelParams::canonical_garch() };
        let (mt, bt) = risks_from_state(&g, 0.04, 0.1, 0.2).unwrap();
        assert_eq!(mt, 0.1);
        assert!((bt + 0.2 / 0.3).abs() < 1e-14);
    }

    #[test]
    fn non_factor_models_divide_by_g() {
        let h = ModelParams { kind: ModelKind::Heston, v0: 0.04, ..ModelParams::canonical_log_ou() };
        let (mt, _) = risks_from_state(&h, 0.04, 0.1, 0.0).unwrap();
        assert!((mt - 0.5).abs() < 1e-14);
    }

    #[test]
    fn validation_names_the_field() {
        let bad = ModelParams { rho: 1.0, ..ModelParams::canonical_log_ou() };
        assert!(matches!(validate_params(bad), Err(Error::Validation { field: "rho", .. })));
        let bad = ModelParams { theta: 0.1, ..ModelParams::canonical_garch() };
        assert!(matches!(validate_params(bad), Err(Error::Validation { field: "theta", .. })));
        let good = ModelParams::canonical_log_ou();
        assert_eq!(validate_params(good).unwrap(), good);
        assert!(validate_params(ModelParams::canonical_garch()).is_ok());
    }

    #[test]
    fn power_utility_conjugate_exponent() {
        let u = UtilitySpec::power(0.5).unwrap();
        assert_eq!(u.q(), Some(-1.0));
        assert!(UtilitySpec::power(1.0).is_err());
        assert_eq!(u.utility(4.0), 4.0);
        assert_eq!(UtilitySpec::Log.q(), None);
    }

    #[test]
    fn dual_is_legendre_transform() {
        for u in [UtilitySpec::Log, UtilitySpec::Power { p: 0.3 }] {
            for z in [0.2, 1.0, 3.0] {
                // brute-force sup over a log-spaced wealth grid
                let sup = (0..200_000)
                    .map(|i| (-8.0 + 16.0 * i as f64 / 200_000.0).exp())
                    .map(|x| u.utility(x) - x * z)
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((sup - u.dual(z)).abs() < 1e-6, "{u:?} z={z}");
            }
        }
    }

    #[test]
    fn canonical_stationary_variance() {
        let p = ModelParams::canonical_log_ou();
        assert!((p.sigma0 - 0.081_208).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn logou_inverse_recovers_v(
            v in -3.0f64..1.0, mu in -1.0f64..1.0, rho in -0.95f64..0.95,
            lambda_v in 0.1f64..3.0, sigma_v in 0.05f64..1.0, coupled: bool,
        ) {
            let p = ModelParams { rho, lambda_v, sigma_v, mean_coupled: coupled, ..ModelParams::canonical_log_ou() };
            let (mt, bt) = risks_from_state(&p, v, mu, 0.0).unwrap();
            prop_assert_eq!(mt, mu);
            let back = logou_v_from_risks(&p, mt, bt).unwrap();
            prop_assert!((back - v).abs() <= 1e-12 * (1.0 + bt.abs() * sigma_v / lambda_v));
        }

        #[test]
        fn coefficients_positive_on_domain(v in 1e-6f64..5.0, kind in 0usize..4) {
            let kinds = [ModelKind::LogOU, ModelKind::GarchFactor, ModelKind::Heston, ModelKind::SteinStein];
            let p = ModelParams { kind: kinds[kind], ..ModelParams::canonical_log_ou() };
            let (g, k) = model_coefficients(&p, v).unwrap();
            prop_assert!(g > 0.0 && k > 0.0);
        }
    }
}

//! Parameters, demand functions and the one-month transition of the model.
//!
//! Prices and values are natural logarithms throughout. The mispricing seen
//! by fundamentalists is `v - p`; the price distortion reported by the
//! analysis module is its negative, `p - v`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full parameter vector of the linear (`kappa3 == 0`) and cubic models.
///
/// All rates are per month.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Linear fundamentalist weight.
    pub kappa: f64,
    /// Cubic fundamentalist weight. Zero selects the linear model.
    pub kappa3: f64,
    /// Trend-follower weight.
    pub beta: f64,
    /// Inverse saturation scale of the trend demand.
    pub gamma: f64,
    /// Decay of the trend EWMA, `1 / (1 + tau)`.
    pub alpha: f64,
    /// Noise-trader volatility.
    pub sigma_n: f64,
    /// Volatility of the fundamental value.
    pub sigma_v: f64,
    /// Drift of the fundamental value.
    pub g: f64,
    /// Initial log fundamental value.
    pub v0: f64,
    /// Prior standard deviation of the initial value.
    pub sigma0: f64,
}

/// Default prior uncertainty on the initial value when none is supplied.
pub const DEFAULT_SIGMA0: f64 = 0.1;

/// Default trend decay, a six month horizon.
pub const DEFAULT_ALPHA: f64 = 1.0 / 7.0;

impl ModelParams {
    /// Estimated parameters of the linear model for the US equity index.
    pub fn table3_us() -> Self {
        ModelParams {
            kappa: 0.015,
            kappa3: 0.0,
            beta: 0.015,
            gamma: 36.7,
            alpha: DEFAULT_ALPHA,
            sigma_n: 0.043,
            sigma_v: 0.018,
            g: 0.0011,
            v0: 4.42,
            sigma0: DEFAULT_SIGMA0,
        }
    }

    /// Estimated parameters of the cubic model for the US equity index.
    pub fn table5_us() -> Self {
        ModelParams {
            kappa: -0.011,
            kappa3: 0.269,
            beta: 0.018,
            gamma: 36.7,
            alpha: DEFAULT_ALPHA,
            sigma_n: 0.042,
            sigma_v: 0.018,
            g: 0.0011,
            v0: 4.41,
            sigma0: DEFAULT_SIGMA0,
        }
    }

    /// Deterministic oscillating regime (`alpha + kappa - alpha*gamma*beta < 0`).
    pub fn fig2() -> Self {
        ModelParams {
            kappa: 0.08,
            kappa3: 0.0,
            beta: 0.1,
            gamma: 50.0,
            alpha: DEFAULT_ALPHA,
            sigma_n: 0.15,
            sigma_v: 0.075,
            g: 0.0,
            v0: 5.0,
            sigma0: DEFAULT_SIGMA0,
        }
    }

    /// Cubic-demand parameters producing a bimodal distortion density.
    pub fn fig12() -> Self {
        ModelParams {
            kappa: 0.0,
            kappa3: 0.4,
            beta: 0.03,
            gamma: 50.0,
            alpha: DEFAULT_ALPHA,
            sigma_n: 0.04,
            sigma_v: 0.02,
            g: 0.001,
            v0: 5.0,
            sigma0: DEFAULT_SIGMA0,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.kappa3 == 0.0
    }

    /// Checks the admissible domain of every field.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("kappa", self.kappa),
            ("kappa3", self.kappa3),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("sigma_n", self.sigma_n),
            ("sigma_v", self.sigma_v),
            ("g", self.g),
            ("v0", self.v0),
            ("sigma0", self.sigma0),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::InvalidParams(format!("{name} is not finite")));
            }
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidParams(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidParams(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParams(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        for (name, value) in [("sigma_n", self.sigma_n), ("sigma_v", self.sigma_v), ("sigma0", self.sigma0)] {
            if value <= 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {value}")));
            }
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate) but allows zero noise, for
    /// deterministic simulation.
    pub fn validate_for_simulation(&self) -> Result<()> {
        let mut probe = *self;
        probe.sigma_n = probe.sigma_n.max(f64::MIN_POSITIVE);
        probe.sigma_v = probe.sigma_v.max(f64::MIN_POSITIVE);
        probe.sigma0 = probe.sigma0.max(f64::MIN_POSITIVE);
        if self.sigma_n < 0.0 || self.sigma_v < 0.0 {
            return Err(Error::InvalidParams("noise volatilities must be >= 0".into()));
        }
        probe.validate()
    }

    /// Parameter value by its canonical name.
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "kappa" => self.kappa,
            "kappa3" => self.kappa3,
            "beta" => self.beta,
            "gamma" => self.gamma,
            "alpha" => self.alpha,
            "sigma_n" => self.sigma_n,
            "sigma_v" => self.sigma_v,
            "g" => self.g,
            "v0" => self.v0,
            "sigma0" => self.sigma0,
            _ => return None,
        })
    }

    /// Mutable access to a parameter by its canonical name.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "kappa" => &mut self.kappa,
            "kappa3" => &mut self.kappa3,
            "beta" => &mut self.beta,
            "gamma" => &mut self.gamma,
            "alpha" => &mut self.alpha,
            "sigma_n" => &mut self.sigma_n,
            "sigma_v" => &mut self.sigma_v,
            "g" => &mut self.g,
            "v0" => &mut self.v0,
            "sigma0" => &mut self.sigma0,
            _ => return None,
        })
    }
}

/// Which fundamentalist demand a calibration uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Linear demand, fitted by EM.
    Linear,
    /// Cubic demand, fitted by maximising the UKF likelihood.
    Nonlinear,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "nonlinear" => Ok(ModelKind::Nonlinear),
            other => Err(Error::InvalidInput(format!("unknown model '{other}' (expected linear or nonlinear)"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "linear",
            ModelKind::Nonlinear => "nonlinear",
        })
    }
}

/// Observable state of the market after one month.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    /// Log price.
    pub p: f64,
    /// Trend signal, an EWMA of one-month log returns.
    pub m: f64,
    /// Log fundamental value.
    pub v: f64,
}

impl MarketState {
    pub fn new(p: f64, m: f64, v: f64) -> Self {
        MarketState { p, m, v }
    }

    /// Price distortion `p - v`.
    pub fn distortion(&self) -> f64 {
        self.p - self.v
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.m.is_finite() && self.v.is_finite()
    }
}

/// Demand of fundamentalists for mispricing `x = v - p`: `kappa*x + kappa3*x^3`.
pub fn fundamentalist_demand(x: f64, params: &ModelParams) -> f64 {
    params.kappa * x + params.kappa3 * x * x * x
}

/// Demand of trend followers: `beta * tanh(gamma * m)`.
pub fn trend_demand(m: f64, params: &ModelParams) -> f64 {
    params.beta * (params.gamma * m).tanh()
}

/// Damping force of the deterministic Liénard form at trend level `x`.
///
/// Only defined for the linear model.
pub fn damping(x: f64, params: &ModelParams) -> Result<f64> {
    if !params.is_linear() {
        return Err(Error::NonlinearModel(params.kappa3));
    }
    let th = (params.gamma * x).tanh();
    Ok(params.alpha + params.kappa - params.alpha * params.gamma * params.beta * (1.0 - th * th))
}

/// `alpha + kappa - alpha*gamma*beta`. Negative values put the deterministic
/// system on a limit cycle.
pub fn bifurcation_margin(params: &ModelParams) -> f64 {
    params.alpha + params.kappa - params.alpha * params.gamma * params.beta
}

/// Advances the discrete model by one month.
///
/// The trend update uses the return realised in this step, so the returned
/// `m` is the trend signal through the new price.
pub fn step_discrete(state: MarketState, params: &ModelParams, eps: f64, eta: f64) -> MarketState {
    let p = state.p
        + fundamentalist_demand(state.v - state.p, params)
        + trend_demand(state.m, params)
        + eps;
    let m = (1.0 - params.alpha) * state.m + params.alpha * (p - state.p);
    let v = state.v + params.g + eta;
    MarketState { p, m, v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fig2_margin_params(kappa: f64) -> ModelParams {
        ModelParams { kappa, ..ModelParams::fig2() }
    }

    #[test]
    fn fundamentalist_demand_examples() {
        let p = ModelParams::table3_us();
        assert_eq!(fundamentalist_demand(0.0, &p), 0.0);
        assert_abs_diff_eq!(fundamentalist_demand(0.5, &p), 0.0075, epsilon = 1e-15);
        let nl = ModelParams::table5_us();
        assert_abs_diff_eq!(fundamentalist_demand(1.0, &nl), 0.258, epsilon = 1e-12);
    }

    #[test]
    fn trend_demand_examples() {
        let p = ModelParams { beta: 0.1, gamma: 50.0, ..ModelParams::fig2() };
        assert_eq!(trend_demand(0.0, &p), 0.0);
        assert_abs_diff_eq!(trend_demand(1.0, &p), 0.1, epsilon = 1e-10);
        let us = ModelParams::table3_us();
        assert_abs_diff_eq!(trend_demand(0.01, &us), 0.015 * 0.367f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(trend_demand(0.01, &us), 0.005266, epsilon = 1e-5);
    }

    #[test]
    fn damping_examples() {
        assert_abs_diff_eq!(damping(0.0, &fig2_margin_params(0.08)).unwrap(), -0.491, epsilon = 1e-3);
        assert_abs_diff_eq!(damping(0.0, &fig2_margin_params(0.8)).unwrap(), 0.229, epsilon = 1e-3);
        let p = fig2_margin_params(0.08);
        assert_abs_diff_eq!(damping(1e3, &p).unwrap(), p.alpha + p.kappa, epsilon = 1e-12);
        assert_abs_diff_eq!(damping(-1e3, &p).unwrap(), p.alpha + p.kappa, epsilon = 1e-12);
    }

    #[test]
    fn damping_rejects_cubic_model() {
        assert!(matches!(damping(0.0, &ModelParams::fig12()), Err(Error::NonlinearModel(_))));
    }

    #[test]
    fn margin_examples() {
        assert_abs_diff_eq!(bifurcation_margin(&fig2_margin_params(0.08)), -0.4914, epsilon = 1e-4);
        assert_abs_diff_eq!(bifurcation_margin(&ModelParams::table3_us()), 0.0793, epsilon = 1e-3);
        let no_trend = ModelParams { beta: 0.0, ..ModelParams::table3_us() };
        assert!(bifurcation_margin(&no_trend) > 0.0);
    }

    #[test]
    fn step_examples() {
        let p = ModelParams { sigma_n: 0.0, sigma_v: 0.0, g: 0.0, ..ModelParams::fig2() };
        let s = MarketState::new(5.0, 0.0, 5.0);
        assert_eq!(step_discrete(s, &p, 0.0, 0.0), s);

        let pull = ModelParams { kappa: 1.0, kappa3: 0.0, beta: 0.0, g: 0.0, ..ModelParams::fig2() };
        let next = step_discrete(MarketState::new(0.0, 0.0, 1.0), &pull, 0.0, 0.0);
        assert_eq!(next.p, 1.0);

        let us = ModelParams::table3_us();
        let next = step_discrete(MarketState::new(4.0, 0.01, 4.42), &us, 0.0, 0.0);
        assert_abs_diff_eq!(next.p, 4.0 + 0.015 * 0.42 + 0.015 * 0.367f64.tanh(), epsilon = 1e-12);
        assert_abs_diff_eq!(next.p, 4.011566, epsilon = 1e-5);
        assert_abs_diff_eq!(next.m, (6.0 / 7.0) * 0.01 + (next.p - 4.0) / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(next.v, 4.42 + 0.0011, epsilon = 1e-15);
    }

    #[test]
    fn validate_rejects_bad_domains() {
        let base = ModelParams::table3_us();
        assert!(base.validate().is_ok());
        assert!(ModelParams { beta: -0.1, ..base }.validate().is_err());
        assert!(ModelParams { alpha: 0.0, ..base }.validate().is_err());
        assert!(ModelParams { alpha: 1.5, ..base }.validate().is_err());
        assert!(ModelParams { sigma_n: 0.0, ..base }.validate().is_err());
        assert!(ModelParams { kappa: f64::NAN, ..base }.validate().is_err());
        assert!(ModelParams { sigma_n: 0.0, sigma_v: 0.0, ..base }.validate_for_simulation().is_ok());
    }

    #[test]
    fn margin_equals_damping_at_origin() {
        for kappa in [-0.05, 0.0, 0.015, 0.08, 0.8] {
            let p = fig2_margin_params(kappa);
            assert_abs_diff_eq!(bifurcation_margin(&p), damping(0.0, &p).unwrap(), epsilon = 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn trend_demand_odd_bounded_monotone(m in -5.0f64..5.0, dm in 1e-6f64..1.0,
                                             beta in 0.0f64..1.0, gamma in 0.1f64..100.0) {
            let p = ModelParams { beta, gamma, ..ModelParams::table3_us() };
            let d = trend_demand(m, &p);
            prop_assert!(d.abs() <= beta);
            prop_assert_eq!(d, -trend_demand(-m, &p));
            prop_assert!(trend_demand(m + dm, &p) >= d);
        }

        #[test]
        fn fundamentalist_demand_odd_monotone(x in -3.0f64..3.0, dx in 1e-6f64..1.0,
                                              kappa in 0.0f64..1.0, kappa3 in 0.0f64..1.0) {
            let p = ModelParams { kappa, kappa3, ..ModelParams::table3_us() };
            prop_assert_eq!(fundamentalist_demand(x, &p), -fundamentalist_demand(-x, &p));
            prop_assert!(fundamentalist_demand(x + dx, &p) >= fundamentalist_demand(x, &p));
        }

        #[test]
        fn damping_minimised_at_origin(x in -2.0f64..2.0, kappa in -0.1f64..1.0,
                                       beta in 0.0f64..0.5, gamma in 1.0f64..80.0) {
            let p = ModelParams { kappa, beta, gamma, kappa3: 0.0, ..ModelParams::fig2() };
            prop_assert!(damping(x, &p).unwrap() >= damping(0.0, &p).unwrap());
            prop_assert!(damping(x, &p).unwrap() <= p.alpha + p.kappa + 1e-15);
        }

        #[test]
        fn zero_noise_fixed_point_is_idempotent(v in -5.0f64..10.0) {
            let p = ModelParams { g: 0.0, ..ModelParams::table5_us() };
            let s = MarketState::new(v, 0.0, v);
            prop_assert_eq!(step_discrete(s, &p, 0.0, 0.0), s);
        }
    }
}

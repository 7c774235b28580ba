//! Unscented Kalman filter for the cubic model.
//!
//! The value dynamics are linear, so only the observation step uses the
//! unscented transform. Smoothing reuses the RTS recursions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{check_inputs, floor_variance, gaussian_logpdf, rts_smooth, FilterOutput, SmoothOutput};
use crate::model::{fundamentalist_demand, ModelParams};

/// Unscented-transform tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtConfig {
    /// Spread of the sigma points.
    pub a: f64,
    /// Secondary scaling.
    pub k: f64,
    /// Prior-knowledge term of the central covariance weight.
    pub b: f64,
}

impl Default for UtConfig {
    fn default() -> Self {
        UtConfig { a: 1.0, k: 2.0, b: 0.0 }
    }
}

impl UtConfig {
    pub fn lambda(&self) -> f64 {
        self.a * self.a * (1.0 + self.k) - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !self.k.is_finite() || !self.b.is_finite() {
            return Err(Error::InvalidParams(format!("invalid unscented transform settings {self:?}")));
        }
        if !(1.0 + self.lambda() > 0.0) {
            return Err(Error::InvalidParams(format!("1 + lambda must be positive, got {}", 1.0 + self.lambda())));
        }
        Ok(())
    }
}

/// Weights `(W0_mean, W0_cov, Wi_mean, Wi_cov)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtWeights {
    pub w0_mean: f64,
    pub w0_cov: f64,
    pub wi_mean: f64,
    pub wi_cov: f64,
}

pub fn ut_weights(cfg: &UtConfig) -> UtWeights {
    let lam = cfg.lambda();
    let w0 = lam / (lam + 1.0);
    let wi = 1.0 / (2.0 * (lam + 1.0));
    UtWeights { w0_mean: w0, w0_cov: w0 + (1.0 - cfg.a * cfg.a + cfg.b), wi_mean: wi, wi_cov: wi }
}

/// The three sigma points of a scalar Gaussian, centre first.
pub fn sigma_points(mean: f64, var: f64, cfg: &UtConfig) -> [f64; 3] {
    let spread = ((1.0 + cfg.lambda()) * var.max(0.0)).sqrt();
    [mean, mean + spread, mean - spread]
}

/// Mean, variance and cross-covariance with the input of `f(x)` for
/// `x ~ N(mean, var)`.
pub fn unscented_transform<F: Fn(f64) -> f64>(mean: f64, var: f64, cfg: &UtConfig, f: F) -> (f64, f64, f64) {
    let w = ut_weights(cfg);
    let spread = ((1.0 + cfg.lambda()) * var.max(0.0)).sqrt();
    let ys = [f(mean), f(mean + spread), f(mean - spread)];
    let y_mean = w.w0_mean * ys[0] + w.wi_mean * (ys[1] + ys[2]);
    let dev = ys.map(|y| y - y_mean);
    let y_var = w.w0_cov * dev[0] * dev[0] + w.wi_cov * (dev[1] * dev[1] + dev[2] * dev[2]);
    let cross = w.wi_cov * spread * (dev[1] - dev[2]);
    (y_mean, y_var, cross)
}

/// `f(x + d) - f(x)` for the fundamentalist demand, without cancellation.
fn demand_increment(x: f64, d: f64, params: &ModelParams) -> f64 {
    params.kappa * d + params.kappa3 * d * (3.0 * x * x + 3.0 * x * d + d * d)
}

/// Forward UKF pass. For `kappa3 == 0` it coincides with the Kalman filter.
pub fn ukf_forward(prices: &[f64], u: &[f64], params: &ModelParams, cfg: &UtConfig) -> Result<FilterOutput> {
    check_inputs(prices, u, params)?;
    cfg.validate()?;
    let n = u.len();
    let mut out = FilterOutput::with_capacity(n);
    let noise_var = params.sigma_n * params.sigma_n;

    let mut mean = params.v0;
    let mut var = params.sigma0 * params.sigma0;
    for t in 0..n {
        if t > 0 {
            mean += params.g;
            var += params.sigma_v * params.sigma_v;
        }
        let p_prev = prices[t];
        let push = params.beta * u[t];
        // Transform demand increments around the predicted mispricing to keep
        // precision when the sigma spread is small.
        let gap = mean - p_prev;
        let (shift, spread, cross) = unscented_transform(0.0, var, cfg, |d| demand_increment(gap, d, params));
        let r_hat = fundamentalist_demand(gap, params) + push + shift;
        let p_hat = p_prev + r_hat;
        let s = spread + noise_var;
        assert!(s > 0.0, "innovation variance must be positive");
        let k = cross / s;
        let e = (prices[t + 1] - p_prev) - r_hat;

        out.v_pred.push(mean);
        out.var_pred.push(var);
        out.price_pred.push(p_hat);
        out.innovation.push(e);
        out.innovation_var.push(s);
        out.gain.push(k);
        out.obs_slope.push(cross / var);
        out.loglik_terms.push(gaussian_logpdf(e, s));

        mean += k * e;
        var = floor_variance(var - k * k * s, &mut out.floor_hits);
        out.v_filt.push(mean);
        out.var_filt.push(var);
    }
    Ok(out)
}

/// RTS smoothing of a UKF pass under the Gaussian approximation.
pub fn ukf_smooth(filter: &FilterOutput) -> SmoothOutput {
    rts_smooth(filter)
}

/// `-(T/2) ln 2pi - 1/2 sum (ln S_t + e_t^2 / S_t)`.
pub fn ukf_predictive_loglik(filter: &FilterOutput) -> f64 {
    filter.loglik_terms.iter().sum()
}

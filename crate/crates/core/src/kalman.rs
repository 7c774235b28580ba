//! Scalar Kalman filter, Rauch–Tung–Striebel smoother and lag-one
//! covariances for the linear model.
//!
//! The hidden state `v[t]` is the fundamental value that drives the return
//! `r[t] = p[t] - p[t-1]`:
//!
//! ```text
//! v[t+1] = v[t] + g + eta,                          eta ~ N(0, sigma_v^2)
//! r[t]   = kappa * (v[t] - p[t-1]) + beta * u[t] + eps,  eps ~ N(0, sigma_n^2)
//! ```
//!
//! with prior `v[1] ~ N(v0, sigma0^2)` and control `u[t] = tanh(gamma * m[t-1])`.
//! A price series `p[0..=T]` yields `T` observations; every output series is
//! indexed by observation, so element `i` belongs to `t = i + 1`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analysis::trend_signal;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Floor applied to every posterior variance.
pub const VARIANCE_FLOOR: f64 = 1e-14;

/// Per-step output of a forward filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    /// Predicted value mean given returns before `t`.
    pub v_pred: Vec<f64>,
    /// Predicted value variance.
    pub var_pred: Vec<f64>,
    /// Filtered value mean given returns up to `t`.
    pub v_filt: Vec<f64>,
    /// Filtered value variance.
    pub var_filt: Vec<f64>,
    pub gain: Vec<f64>,
    /// `p[t] - p_hat[t]`.
    pub innovation: Vec<f64>,
    /// Predictive variance of `p[t]`.
    pub innovation_var: Vec<f64>,
    /// One-step-ahead price prediction `p_hat[t]`.
    pub price_pred: Vec<f64>,
    /// Effective slope of the observation in the value, `Cov(p, v) / Var(v)`.
    /// Equals `kappa` for the linear filter.
    pub obs_slope: Vec<f64>,
    /// Gaussian log-density of each observation under its predictive law.
    pub loglik_terms: Vec<f64>,
    /// Number of times a variance hit [`VARIANCE_FLOOR`].
    pub floor_hits: usize,
}

impl FilterOutput {
    pub(crate) fn with_capacity(n: usize) -> Self {
        FilterOutput {
            v_pred: Vec::with_capacity(n),
            var_pred: Vec::with_capacity(n),
            v_filt: Vec::with_capacity(n),
            var_filt: Vec::with_capacity(n),
            gain: Vec::with_capacity(n),
            innovation: Vec::with_capacity(n),
            innovation_var: Vec::with_capacity(n),
            price_pred: Vec::with_capacity(n),
            obs_slope: Vec::with_capacity(n),
            loglik_terms: Vec::with_capacity(n),
            floor_hits: 0,
        }
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.v_filt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_filt.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t", "v_pred", "V_pred", "v_filt", "V_filt", "gain", "innovation", "innovation_var", "price_pred",
            "loglik_terms",
        ])?;
        for i in 0..self.len() {
            w.write_record(&[
                (i + 1).to_string(),
                self.v_pred[i].to_string(),
                self.var_pred[i].to_string(),
                self.v_filt[i].to_string(),
                self.var_filt[i].to_string(),
                self.gain[i].to_string(),
                self.innovation[i].to_string(),
                self.innovation_var[i].to_string(),
                self.price_pred[i].to_string(),
                self.loglik_terms[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Output of the backward smoothing pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothOutput {
    pub v_smooth: Vec<f64>,
    pub var_smooth: Vec<f64>,
    /// `lag1_cov[i] = Cov(v[t], v[t+1] | all returns)` for `t = i + 1`;
    /// one element shorter than the other series.
    pub lag1_cov: Vec<f64>,
    /// Smoother gains, with `J[T] = 0`.
    pub j: Vec<f64>,
}

impl SmoothOutput {
    pub fn len(&self) -> usize {
        self.v_smooth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_smooth.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "v_smooth", "V_smooth", "lag1_cov", "J"])?;
        for i in 0..self.len() {
            let lag = self.lag1_cov.get(i).map(|c| c.to_string()).unwrap_or_default();
            w.write_record(&[
                (i + 1).to_string(),
                self.v_smooth[i].to_string(),
                self.var_smooth[i].to_string(),
                lag,
                self.j[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Trend-follower control `u[t] = tanh(gamma * m[t-1])` for every return of
/// `prices`, with the trend signal started at zero.
pub fn control_series(prices: &[f64], alpha: f64, gamma: f64) -> Vec<f64> {
    if prices.len() < 2 {
        return Vec::new();
    }
    let m = trend_signal(prices, alpha);
    m[..prices.len() - 1].iter().map(|&x| (gamma * x).tanh()).collect()
}

pub(crate) fn check_inputs(prices: &[f64], u: &[f64], params: &ModelParams) -> Result<()> {
    if prices.len() < 3 {
        return Err(Error::TooShort { needed: 3, got: prices.len() });
    }
    if u.len() != prices.len() - 1 {
        return Err(Error::InvalidInput(format!(
            "control series has {} elements, expected {}",
            u.len(),
            prices.len() - 1
        )));
    }
    if prices.iter().chain(u).any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("prices and controls must be finite".into()));
    }
    params.validate()
}

pub(crate) fn floor_variance(v: f64, hits: &mut usize) -> f64 {
    if v < VARIANCE_FLOOR {
        *hits += 1;
        VARIANCE_FLOOR
    } else {
        v
    }
}

pub(crate) fn gaussian_logpdf(x: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI).ln() + var.ln() + x * x / var)
}

/// Exact forward filter of the linear model.
pub fn kf_forward(prices: &[f64], u: &[f64], params: &ModelParams) -> Result<FilterOutput> {
    if !params.is_linear() {
        return Err(Error::NonlinearModel(params.kappa3));
    }
    check_inputs(prices, u, params)?;
    let n = u.len();
    let mut out = FilterOutput::with_capacity(n);
    let (kappa, beta) = (params.kappa, params.beta);
    let noise_var = params.sigma_n * params.sigma_n;

    let mut mean = params.v0;
    let mut var = params.sigma0 * params.sigma0;
    for t in 0..n {
        if t > 0 {
            mean += params.g;
            var += params.sigma_v * params.sigma_v;
        }
        let p_prev = prices[t];
        let r_hat = kappa * (mean - p_prev) + beta * u[t];
        let p_hat = p_prev + r_hat;
        let s = kappa * kappa * var + noise_var;
        let k = kappa * var / s;
        let e = (prices[t + 1] - p_prev) - r_hat;

        out.v_pred.push(mean);
        out.var_pred.push(var);
        out.price_pred.push(p_hat);
        out.innovation.push(e);
        out.innovation_var.push(s);
        out.gain.push(k);
        out.obs_slope.push(kappa);
        out.loglik_terms.push(gaussian_logpdf(e, s));

        mean += k * e;
        var = floor_variance(var - kappa * k * var, &mut out.floor_hits);
        out.v_filt.push(mean);
        out.var_filt.push(var);
    }
    Ok(out)
}

/// Sum of the per-step predictive log-densities.
pub fn kf_predictive_loglik(filter: &FilterOutput) -> f64 {
    filter.loglik_terms.iter().sum()
}

/// Backward RTS pass, including the lag-one covariances.
pub fn rts_smooth(filter: &FilterOutput) -> SmoothOutput {
    let n = filter.len();
    let mut v_smooth = vec![0.0; n];
    let mut var_smooth = vec![0.0; n];
    let mut j = vec![0.0; n];
    if n == 0 {
        return SmoothOutput { v_smooth, var_smooth, lag1_cov: Vec::new(), j };
    }
    v_smooth[n - 1] = filter.v_filt[n - 1];
    var_smooth[n - 1] = filter.var_filt[n - 1];
    for t in (0..n - 1).rev() {
        let gain = filter.var_filt[t] / filter.var_pred[t + 1];
        j[t] = gain;
        v_smooth[t] = filter.v_filt[t] + gain * (v_smooth[t + 1] - filter.v_pred[t + 1]);
        var_smooth[t] = filter.var_filt[t] + gain * gain * (var_smooth[t + 1] - filter.var_pred[t + 1]);
    }
    let mut out = SmoothOutput { v_smooth, var_smooth, lag1_cov: Vec::new(), j };
    out.lag1_cov = lag_one_cov(filter, &out);
    out
}

/// Lag-one posterior covariances `Cov(v[t], v[t+1] | all returns)` from the
/// backward recursion started at `(1 - H[T] K[T]) * Vfilt[T-1]`.
pub fn lag_one_cov(filter: &FilterOutput, smooth: &SmoothOutput) -> Vec<f64> {
    let n = filter.len();
    if n < 2 {
        return Vec::new();
    }
    let mut cov = vec![0.0; n - 1];
    let last = n - 1;
    cov[last - 1] = (1.0 - filter.obs_slope[last] * filter.gain[last]) * filter.var_filt[last - 1];
    // cov[i] pairs (t, t+1) with t = i + 1; the recursion walks t downwards.
    for i in (0..last - 1).rev() {
        let f = filter.var_filt[i + 1];
        cov[i] = f * smooth.j[i] + smooth.j[i + 1] * (cov[i + 1] - f) * smooth.j[i];
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::simulate_path;
    use approx::assert_relative_eq;

    fn series(params: &ModelParams, len: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let path = simulate_path(params, len, seed).unwrap();
        let u = control_series(&path.p, params.alpha, params.gamma);
        (path.p, u)
    }

    #[test]
    fn zero_kappa_gives_uninformative_filter() {
        let params = ModelParams { kappa: 0.0, ..ModelParams::table3_us() };
        let (p, u) = series(&ModelParams::table3_us(), 50, 3);
        let f = kf_forward(&p, &u, &params).unwrap();
        assert!(f.gain.iter().all(|&k| k == 0.0));
        assert_eq!(f.v_filt, f.v_pred);
        assert_eq!(f.var_filt, f.var_pred);
    }

    #[test]
    fn single_step_hand_values() {
        // V_pred = 0.01, kappa = 0.1, sigma_n = 0.05.
        let params = ModelParams { kappa: 0.1, sigma_n: 0.05, sigma0: 0.1, ..ModelParams::table3_us() };
        let p = vec![4.0, 4.01, 4.02];
        let u = vec![0.0, 0.0];
        let f = kf_forward(&p, &u, &params).unwrap();
        assert_relative_eq!(f.gain[0], 0.001 / 0.0026, max_relative = 1e-12);
        assert!((f.gain[0] - 0.38462).abs() < 1e-5);
        assert!((f.var_filt[0] - 0.0096154).abs() < 1e-7);
        assert_relative_eq!(f.innovation_var[0], 0.0026, max_relative = 1e-12);
    }

    #[test]
    fn riccati_collapses_without_value_noise() {
        let truth = ModelParams::table3_us();
        let params = ModelParams { sigma_v: 1e-12, kappa: 0.2, ..truth };
        let (p, u) = series(&truth, 3000, 5);
        let f = kf_forward(&p, &u, &params).unwrap();
        // Without value noise the precision grows by kappa^2 / sigma_n^2 per
        // observation, so V* = 0 is approached like 1/t.
        let info = params.kappa * params.kappa / (params.sigma_n * params.sigma_n);
        for (i, v) in f.var_pred.iter().enumerate() {
            let exact = 1.0 / (1.0 / (params.sigma0 * params.sigma0) + i as f64 * info);
            assert_relative_eq!(*v, exact, max_relative = 1e-6);
        }
        assert!(f.var_pred.last().unwrap() < &2e-5);
    }

    #[test]
    fn terminal_condition_and_variance_ordering() {
        let params = ModelParams::table3_us();
        let (p, u) = series(&params, 200, 11);
        let f = kf_forward(&p, &u, &params).unwrap();
        let s = rts_smooth(&f);
        let n = f.len();
        assert_eq!(s.v_smooth[n - 1], f.v_filt[n - 1]);
        assert_eq!(s.var_smooth[n - 1], f.var_filt[n - 1]);
        assert_eq!(s.j[n - 1], 0.0);
        assert_eq!(s.lag1_cov.len(), n - 1);
        for i in 0..n {
            assert!(s.var_smooth[i] <= f.var_filt[i] + 1e-12);
            assert!(s.var_smooth[i] > 0.0);
        }
    }

    #[test]
    fn two_observations_use_initialisation_only() {
        let params = ModelParams::table3_us();
        let p = vec![4.4, 4.45, 4.41];
        let u = control_series(&p, params.alpha, params.gamma);
        let f = kf_forward(&p, &u, &params).unwrap();
        let s = rts_smooth(&f);
        assert_eq!(s.lag1_cov, vec![(1.0 - params.kappa * f.gain[1]) * f.var_filt[0]]);
    }

    #[test]
    fn lag_one_matches_gain_identity() {
        // Cov(v[t], v[t+1] | all) = J[t] * Vsmooth[t+1] for a scalar random walk.
        let params = ModelParams::table3_us();
        let (p, u) = series(&params, 300, 2);
        let f = kf_forward(&p, &u, &params).unwrap();
        let s = rts_smooth(&f);
        for i in 0..s.lag1_cov.len() {
            assert_relative_eq!(s.lag1_cov[i], s.j[i] * s.var_smooth[i + 1], max_relative = 1e-9);
        }
    }

    #[test]
    fn loglik_is_sum_of_independent_densities() {
        let params = ModelParams::table3_us();
        let (p, u) = series(&params, 100, 9);
        let f = kf_forward(&p, &u, &params).unwrap();
        let ll: f64 = (0..f.len())
            .map(|i| {
                let (e, s) = (f.innovation[i], f.innovation_var[i]);
                (-(e * e) / (2.0 * s)).exp().ln() - 0.5 * (2.0 * PI * s).ln()
            })
            .sum();
        assert_relative_eq!(kf_predictive_loglik(&f), ll, max_relative = 1e-12);
    }

    #[test]
    fn unit_density_point_has_zero_loglik() {
        assert!(gaussian_logpdf(0.0, 1.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let params = ModelParams::table3_us();
        assert!(matches!(kf_forward(&[1.0, 1.1], &[0.0], &params), Err(Error::TooShort { .. })));
        assert!(kf_forward(&[1.0, 1.1, 1.2], &[0.0], &params).is_err());
        let bad = ModelParams { sigma_n: 0.0, ..params };
        assert!(kf_forward(&[1.0, 1.1, 1.2], &[0.0, 0.0], &bad).is_err());
        let bad = ModelParams { sigma0: -1.0, ..params };
        assert!(kf_forward(&[1.0, 1.1, 1.2], &[0.0, 0.0], &bad).is_err());
        assert!(kf_forward(&[1.0, 1.1, 1.2], &[0.0, 0.0], &ModelParams::table5_us()).is_err());
    }

    #[test]
    fn smoothing_leaves_filter_untouched() {
        let params = ModelParams::table3_us();
        let (p, u) = series(&params, 120, 4);
        let f = kf_forward(&p, &u, &params).unwrap();
        let before = f.clone();
        let _ = rts_smooth(&f);
        assert_eq!(kf_forward(&p, &u, &params).unwrap(), before);
    }

    #[test]
    fn csv_exports_have_headers() {
        let params = ModelParams::table3_us();
        let (p, u) = series(&params, 10, 4);
        let f = kf_forward(&p, &u, &params).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,v_pred,V_pred,v_filt,V_filt,gain,innovation,innovation_var"));
        assert_eq!(text.lines().count(), f.len() + 1);
        let mut buf = Vec::new();
        rts_smooth(&f).write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,v_smooth,V_smooth,lag1_cov,J"));
    }
}

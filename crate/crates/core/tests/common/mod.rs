//! Shared test helpers: an exact joint-Gaussian reference for the linear
//! state-space model and synthetic datasets on disk.

#![allow(dead_code)]

use std::fs;
use std::path::Path;

use chiarella::ModelParams;
use nalgebra::{DMatrix, DVector};

/// Posterior moments of the hidden values computed by conditioning the
/// joint Gaussian of values and returns directly.
pub struct DenseMoments {
    pub pred_mean: Vec<f64>,
    pub pred_var: Vec<f64>,
    pub filt_mean: Vec<f64>,
    pub filt_var: Vec<f64>,
    pub smooth_mean: Vec<f64>,
    pub smooth_var: Vec<f64>,
    pub lag1_cov: Vec<f64>,
    pub loglik: f64,
}

/// Returns `r[t] = p[t+1] - p[t]` satisfy
/// `r = kappa (v - p0 - L r) + beta u + eps` with `L` the strictly lower
/// triangular matrix of ones, so `r = M^-1 (kappa v + c + eps)` with
/// `M = I + kappa L` and `c = beta u - kappa p0`. With `u` fixed at its
/// observed values this is a linear Gaussian system in `(v, r)`.
pub fn dense_moments(prices: &[f64], u: &[f64], params: &ModelParams) -> DenseMoments {
    let n = u.len();
    let kappa = params.kappa;
    let sv2 = params.sigma_v * params.sigma_v;
    let s02 = params.sigma0 * params.sigma0;
    let sn2 = params.sigma_n * params.sigma_n;

    let v_mean = DVector::from_fn(n, |i, _| params.v0 + params.g * i as f64);
    let v_cov = DMatrix::from_fn(n, n, |i, j| s02 + sv2 * i.min(j) as f64);
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else if j < i { kappa } else { 0.0 });
    let a = m.try_inverse().expect("unit lower triangular");
    let c = DVector::from_fn(n, |i, _| params.beta * u[i] - kappa * prices[0]);
    let r_mean = &a * (kappa * &v_mean + c);
    let r_cov = &a * (kappa * kappa * &v_cov + sn2 * DMatrix::identity(n, n)) * a.transpose();
    let vr_cov = kappa * &v_cov * a.transpose();
    let r_obs = DVector::from_fn(n, |i, _| prices[i + 1] - prices[i]);

    // Conditions on the first `k` returns.
    let condition = |k: usize| -> (DVector<f64>, DMatrix<f64>) {
        if k == 0 {
            return (v_mean.clone(), v_cov.clone());
        }
        let s = r_cov.view((0, 0), (k, k)).into_owned();
        let cross = vr_cov.view((0, 0), (n, k)).into_owned();
        let resid = r_obs.rows(0, k) - r_mean.rows(0, k);
        let chol = s.cholesky().expect("positive definite return covariance");
        let mean = &v_mean + &cross * chol.solve(&resid);
        let cov = &v_cov - &cross * chol.solve(&cross.transpose());
        (mean, cov)
    };

    let mut out = DenseMoments {
        pred_mean: Vec::new(),
        pred_var: Vec::new(),
        filt_mean: Vec::new(),
        filt_var: Vec::new(),
        smooth_mean: Vec::new(),
        smooth_var: Vec::new(),
        lag1_cov: Vec::new(),
        loglik: 0.0,
    };
    for t in 0..n {
        let (pm, pc) = condition(t);
        out.pred_mean.push(pm[t]);
        out.pred_var.push(pc[(t, t)]);
        let (fm, fc) = condition(t + 1);
        out.filt_mean.push(fm[t]);
        out.filt_var.push(fc[(t, t)]);
    }
    let (sm, sc) = condition(n);
    for t in 0..n {
        out.smooth_mean.push(sm[t]);
        out.smooth_var.push(sc[(t, t)]);
        if t + 1 < n {
            out.lag1_cov.push(sc[(t, t + 1)]);
        }
    }
    let chol = r_cov.clone().cholesky().unwrap();
    let resid = &r_obs - &r_mean;
    let quad = resid.dot(&chol.solve(&resid));
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    out.loglik = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
    out
}

/// Writes a monthly `date,price` file from log prices, starting in 1900.
pub fn write_price_csv(path: &Path, log_prices: &[f64]) {
    let mut text = String::from("date,price\n");
    for (i, lp) in log_prices.iter().enumerate() {
        let (y, m) = (1900 + i / 12, i % 12 + 1);
        text.push_str(&format!("{y:04}-{m:02}-01,{}\n", lp.exp()));
    }
    fs::write(path, text).unwrap();
}

/// `|a - b| <= tol * max(|a|, |b|, floor)`.
pub fn rel_close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}

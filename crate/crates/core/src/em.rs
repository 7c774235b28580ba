//! Expectation-maximisation calibration of the linear model.
//!
//! The E-step runs the Kalman filter and RTS smoother; the M-step has a
//! closed form for every free parameter. `gamma` and `alpha` are never
//! updated.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{check_inputs, kf_forward, kf_predictive_loglik, rts_smooth};
use crate::model::ModelParams;

/// Default log-likelihood change below which EM stops.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 500;
/// Slack allowed on log-likelihood decreases before a diagnostic is raised.
pub const MONOTONE_SLACK: f64 = 1e-8;
/// Lower bound on the prior variance of the initial value.
pub const SIGMA0_SQ_FLOOR: f64 = 1e-8;
/// Relative step of the numerical Hessian.
pub const HESSIAN_REL_STEP: f64 = 1e-4;

/// Parameters whose t-statistics are reported for the linear model.
pub const LINEAR_TSTAT_PARAMS: [&str; 6] = ["kappa", "beta", "sigma_n", "sigma_v", "g", "v0"];

/// Posterior moments of the hidden values given all returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    /// `E[v_t]`.
    pub e_v: Vec<f64>,
    /// `E[v_t^2]`.
    pub e_v2: Vec<f64>,
    /// `E[v_t v_{t+1}]`, one element shorter.
    pub e_vv: Vec<f64>,
    /// Predictive log-likelihood of the parameters the moments were taken under.
    pub loglik: f64,
}

impl SufficientStats {
    pub fn len(&self) -> usize {
        self.e_v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_v.is_empty()
    }

    /// Posterior variance of `v_t`.
    pub fn variance(&self, t: usize) -> f64 {
        self.e_v2[t] - self.e_v[t] * self.e_v[t]
    }
}

/// Outcome of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: ModelParams,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default)]
    pub tstats: BTreeMap<String, f64>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl CalibrationResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn e_step(prices: &[f64], u: &[f64], params: &ModelParams) -> Result<SufficientStats> {
    let filter = kf_forward(prices, u, params)?;
    let smooth = rts_smooth(&filter);
    let e_v = smooth.v_smooth.clone();
    let e_v2 = e_v.iter().zip(&smooth.var_smooth).map(|(m, v)| v + m * m).collect();
    let e_vv = smooth
        .lag1_cov
        .iter()
        .enumerate()
        .map(|(t, c)| c + e_v[t] * e_v[t + 1])
        .collect();
    Ok(SufficientStats { e_v, e_v2, e_vv, loglik: kf_predictive_loglik(&filter) })
}

/// Closed-form maximiser of the expected complete-data log-likelihood.
///
/// When the unconstrained trend weight is negative the update is taken on
/// the boundary `beta = 0`. With `u == 0` the trend weight is set to zero.
pub fn m_step(stats: &SufficientStats, prices: &[f64], u: &[f64], prior: &ModelParams) -> Result<ModelParams> {
    let n = u.len();
    if stats.len() != n || prices.len() != n + 1 || stats.e_vv.len() + 1 != n {
        return Err(Error::InvalidInput("sufficient statistics do not match the series".into()));
    }
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for t in 0..n {
        let p = prices[t];
        let r = prices[t + 1] - p;
        let gap = stats.e_v[t] - p;
        a11 += stats.e_v2[t] - 2.0 * stats.e_v[t] * p + p * p;
        a12 += gap * u[t];
        a22 += u[t] * u[t];
        b1 += gap * r;
        b2 += u[t] * r;
    }
    let value_only = |b1: f64| (b1 / a11, 0.0);
    let (kappa, beta) = if a22 == 0.0 {
        value_only(b1)
    } else {
        let det = a11 * a22 - a12 * a12;
        if !(det > 1e-14 * a11 * a22) {
            return Err(Error::Singular(
                "degenerate regressors in the M-step (mispricing collinear with the trend control)".into(),
            ));
        }
        let kappa = (a22 * b1 - a12 * b2) / det;
        let beta = (a11 * b2 - a12 * b1) / det;
        if beta < 0.0 {
            value_only(b1)
        } else {
            (kappa, beta)
        }
    };

    let mut noise = 0.0;
    for t in 0..n {
        let p = prices[t];
        let resid = prices[t + 1] - p - kappa * (stats.e_v[t] - p) - beta * u[t];
        noise += resid * resid + kappa * kappa * stats.variance(t);
    }
    let sigma_n = (noise / n as f64).sqrt();

    let g = (stats.e_v[n - 1] - stats.e_v[0]) / (n - 1) as f64;
    let mut incr = 0.0;
    for k in 0..n - 1 {
        incr += stats.e_v2[k] + stats.e_v2[k + 1] - 2.0 * stats.e_vv[k];
    }
    let sigma_v_sq = incr / (n - 1) as f64 - g * g;
    let v0 = stats.e_v[0];
    let sigma0_sq = stats.variance(0).max(SIGMA0_SQ_FLOOR);

    Ok(ModelParams {
        kappa,
        beta,
        sigma_n,
        sigma_v: sigma_v_sq.max(0.0).sqrt(),
        g,
        v0,
        sigma0: sigma0_sq.sqrt(),
        ..*prior
    })
}

/// Expected complete-data log-likelihood of `params` under the posterior
/// moments in `stats`.
pub fn expected_complete_loglik(stats: &SufficientStats, prices: &[f64], u: &[f64], params: &ModelParams) -> f64 {
    let n = u.len();
    let ln2pi = (2.0 * PI).ln();
    let (kappa, beta) = (params.kappa, params.beta);
    let sn2 = params.sigma_n * params.sigma_n;
    let sv2 = params.sigma_v * params.sigma_v;
    let s02 = params.sigma0 * params.sigma0;

    let mut obs = 0.0;
    for t in 0..n {
        let p = prices[t];
        let resid = prices[t + 1] - p - kappa * (stats.e_v[t] - p) - beta * u[t];
        obs += resid * resid + kappa * kappa * stats.variance(t);
    }
    let mut state = 0.0;
    for k in 0..n - 1 {
        let step = stats.e_v[k + 1] - stats.e_v[k] - params.g;
        let var = stats.e_v2[k] - stats.e_v[k].powi(2) + stats.e_v2[k + 1] - stats.e_v[k + 1].powi(2)
            - 2.0 * (stats.e_vv[k] - stats.e_v[k] * stats.e_v[k + 1]);
        state += step * step + var;
    }
    let init = (stats.e_v[0] - params.v0).powi(2) + stats.variance(0);

    -0.5 * (n as f64 * (ln2pi + sn2.ln()) + obs / sn2)
        - 0.5 * ((n - 1) as f64 * (ln2pi + sv2.ln()) + state / sv2)
        - 0.5 * (ln2pi + s02.ln() + init / s02)
}

/// Runs EM from `params0` until the log-likelihood gain drops below `tol`
/// or `max_iter` M-steps have been taken.
pub fn em_fit(prices: &[f64], u: &[f64], params0: &ModelParams, max_iter: usize, tol: f64) -> Result<CalibrationResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    if !params0.is_linear() {
        return Err(Error::NonlinearModel(params0.kappa3));
    }
    check_inputs(prices, u, params0)?;

    let mut params = *params0;
    let mut stats = e_step(prices, u, &params)?;
    let mut result = CalibrationResult {
        params,
        loglik: stats.loglik,
        loglik_trace: vec![stats.loglik],
        iterations: 0,
        converged: false,
        tstats: BTreeMap::new(),
        diagnostics: Vec::new(),
    };
    for _ in 0..max_iter {
        let next = m_step(&stats, prices, u, &params)?;
        next.validate().map_err(|e| Error::Diverged(format!("M-step left the admissible domain: {e}")))?;
        let next_stats = e_step(prices, u, &next)?;
        result.iterations += 1;
        result.loglik_trace.push(next_stats.loglik);
        let gain = next_stats.loglik - stats.loglik;
        if gain < -MONOTONE_SLACK {
            result.diagnostics.push(format!(
                "log-likelihood decreased by {:.3e} at iteration {}; stopping",
                -gain, result.iterations
            ));
            break;
        }
        params = next;
        stats = next_stats;
        if gain.abs() < tol {
            result.converged = true;
            break;
        }
    }
    result.params = params;
    result.loglik = stats.loglik;
    Ok(result)
}

/// Standard errors and t-statistics from the inverse observed information
/// of a log-likelihood, by central differences.
///
/// Returns `(tstats, std_errors, diagnostics)`. Parameters whose curvature
/// is not negative, or that cannot be perturbed inside the admissible
/// domain, get no entry.
pub(crate) fn numerical_tstats<F>(
    params: &ModelParams,
    names: &[&str],
    loglik: F,
) -> (BTreeMap<String, f64>, BTreeMap<String, f64>, Vec<String>)
where
    F: Fn(&ModelParams) -> Option<f64> + Sync,
{
    let mut diagnostics = Vec::new();
    let mut tstats = BTreeMap::new();
    let mut std_errors = BTreeMap::new();
    let Some(base) = loglik(params) else {
        diagnostics.push("log-likelihood is not finite at the estimate".into());
        return (tstats, std_errors, diagnostics);
    };
    let steps: Vec<f64> = names
        .iter()
        .map(|n| HESSIAN_REL_STEP * params.get(n).expect("known parameter").abs().max(1e-4))
        .collect();
    let shifted = |moves: &[(usize, f64)]| -> Option<f64> {
        let mut p = *params;
        for &(i, sign) in moves {
            *p.get_mut(names[i]).expect("known parameter") += sign * steps[i];
        }
        p.validate().ok()?;
        loglik(&p)
    };

    let k = names.len();
    let mut usable: Vec<bool> = vec![true; k];
    let mut hess = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        match (shifted(&[(i, 1.0)]), shifted(&[(i, -1.0)])) {
            (Some(up), Some(down)) => hess[(i, i)] = (up - 2.0 * base + down) / (steps[i] * steps[i]),
            _ => {
                usable[i] = false;
                diagnostics.push(format!("{}: perturbation leaves the admissible domain", names[i]));
            }
        }
    }
    for i in 0..k {
        for j in i + 1..k {
            if !(usable[i] && usable[j]) {
                continue;
            }
            let v = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
                .map(|(a, b)| shifted(&[(i, a), (j, b)]));
            let h = match v {
                [Some(pp), Some(pm), Some(mp), Some(mm)] => (pp - pm - mp + mm) / (4.0 * steps[i] * steps[j]),
                _ => f64::NAN,
            };
            hess[(i, j)] = h;
            hess[(j, i)] = h;
        }
    }

    // Drop flat or non-concave directions one parameter at a time.
    let scale = (0..k).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..k {
        if usable[i] && !(-hess[(i, i)] > 1e-10 * scale.max(1e-300)) {
            usable[i] = false;
            diagnostics.push(format!("{}: flat or non-concave likelihood direction", names[i]));
        }
    }
    let idx: Vec<usize> = (0..k).filter(|&i| usable[i]).collect();
    if idx.is_empty() {
        return (tstats, std_errors, diagnostics);
    }
    let info = DMatrix::from_fn(idx.len(), idx.len(), |a, b| -hess[(idx[a], idx[b])]);
    if info.iter().any(|x| !x.is_finite()) {
        diagnostics.push("observed information is not finite".into());
        return (tstats, std_errors, diagnostics);
    }
    let eig = SymmetricEigen::new(info.clone());
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let bad: Vec<bool> = (0..idx.len())
        .map(|a| {
            (0..idx.len()).any(|e| {
                eig.eigenvalues[e] <= 1e-12 * max_eig && eig.eigenvectors[(a, e)].abs() > 1e-6
            })
        })
        .collect();
    let inv = if bad.iter().any(|&b| b) {
        // Pseudo-inverse on the positive eigenspace.
        let mut inv = DMatrix::zeros(idx.len(), idx.len());
        for e in 0..idx.len() {
            let lam = eig.eigenvalues[e];
            if lam > 1e-12 * max_eig {
                let v = eig.eigenvectors.column(e);
                inv += (v * v.transpose()) / lam;
            }
        }
        inv
    } else {
        info.clone().cholesky().map(|c| c.inverse()).unwrap_or_else(|| info.pseudo_inverse(0.0).unwrap())
    };
    for (a, &i) in idx.iter().enumerate() {
        if bad[a] {
            diagnostics.push(format!("{}: information matrix is not positive definite", names[i]));
            continue;
        }
        let se = inv[(a, a)].sqrt();
        if !(se.is_finite() && se > 0.0) {
            diagnostics.push(format!("{}: standard error is not finite", names[i]));
            continue;
        }
        let est = params.get(names[i]).unwrap();
        std_errors.insert(names[i].to_string(), se);
        tstats.insert(names[i].to_string(), est / se);
    }
    (tstats, std_errors, diagnostics)
}

/// T-statistics from the numerical Hessian of the Kalman predictive
/// log-likelihood at `result.params`. Also stores them and any diagnostics
/// in `result`.
pub fn em_tstats(result: &mut CalibrationResult, prices: &[f64], u: &[f64]) -> BTreeMap<String, f64> {
    let (t, _, diag) = numerical_tstats(&result.params, &LINEAR_TSTAT_PARAMS, |p| {
        let ll = kf_forward(prices, u, p).ok().map(|f| kf_predictive_loglik(&f))?;
        ll.is_finite().then_some(ll)
    });
    result.tstats = t.clone();
    result.diagnostics.extend(diag);
    t
}

/// Standard errors matching [`em_tstats`].
pub fn em_std_errors(params: &ModelParams, prices: &[f64], u: &[f64]) -> BTreeMap<String, f64> {
    numerical_tstats(params, &LINEAR_TSTAT_PARAMS, |p| {
        let ll = kf_forward(prices, u, p).ok().map(|f| kf_predictive_loglik(&f))?;
        ll.is_finite().then_some(ll)
    })
    .1
}

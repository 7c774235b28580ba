//! Direct likelihood maximisation and the two-step per-asset / per-class
//! calibration.
//!
//! Positive parameters are optimised on a log scale. Series split by
//! exclusion windows are filtered segment by segment: the first segment
//! starts from `params.v0`, later ones from their first price with the same
//! prior spread.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{std_dev, trend_signal};
use crate::data_io::AssetSeries;
use crate::em::{em_fit, numerical_tstats, CalibrationResult, DEFAULT_MAX_ITER, DEFAULT_TOL, LINEAR_TSTAT_PARAMS};
use crate::error::{Error, Result};
use crate::kalman::{control_series, kf_forward, kf_predictive_loglik};
use crate::model::{ModelKind, ModelParams, DEFAULT_SIGMA0};
use crate::simulate::path_rng;
use crate::ukf::{ukf_forward, ukf_predictive_loglik, UtConfig};

/// Parameters reported with t-statistics for the cubic model.
pub const NONLINEAR_TSTAT_PARAMS: [&str; 6] = ["kappa", "kappa3", "beta", "sigma_n", "g", "v0"];

const LOG_SCALED: [&str; 4] = ["beta", "sigma_n", "sigma_v", "sigma0"];
const LOG_FLOOR: f64 = 1e-10;

/// Map between a subset of [`ModelParams`] fields and an unconstrained
/// vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reparam {
    pub names: Vec<String>,
}

impl Reparam {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let probe = ModelParams::table3_us();
        let mut out = Vec::new();
        for n in names {
            let n = n.as_ref();
            if probe.get(n).is_none() || n == "gamma" || n == "alpha" {
                return Err(Error::InvalidInput(format!("'{n}' is not a free parameter")));
            }
            if out.iter().any(|m| m == n) {
                return Err(Error::InvalidInput(format!("'{n}' listed twice")));
            }
            out.push(n.to_string());
        }
        Ok(Reparam { names: out })
    }

    fn is_log(name: &str) -> bool {
        LOG_SCALED.contains(&name)
    }

    pub fn encode(&self, params: &ModelParams) -> Vec<f64> {
        self.names
            .iter()
            .map(|n| {
                let v = params.get(n).unwrap();
                if Self::is_log(n) {
                    v.max(LOG_FLOOR).ln()
                } else {
                    v
                }
            })
            .collect()
    }

    pub fn decode(&self, theta: &[f64], base: &ModelParams) -> ModelParams {
        let mut p = *base;
        for (n, &x) in self.names.iter().zip(theta) {
            *p.get_mut(n).unwrap() = if Self::is_log(n) { x.exp() } else { x };
        }
        p
    }
}

/// Parameters used for segment `index` of a windowed series.
pub fn segment_params(params: &ModelParams, index: usize, first_price: f64) -> ModelParams {
    if index == 0 {
        *params
    } else {
        ModelParams { v0: first_price, ..*params }
    }
}

/// Predictive log-likelihood summed over segments.
pub fn segmented_loglik(segments: &[Vec<f64>], params: &ModelParams, model: ModelKind, ut: &UtConfig) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::InvalidInput("no data segments".into()));
    }
    let mut total = 0.0;
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(Error::TooShort { needed: 3, got: 0 });
        }
        let p = segment_params(params, i, seg[0]);
        let u = control_series(seg, p.alpha, p.gamma);
        total += match model {
            ModelKind::Linear => kf_predictive_loglik(&kf_forward(seg, &u, &p)?),
            ModelKind::Nonlinear => ukf_predictive_loglik(&ukf_forward(seg, &u, &p, ut)?),
        };
    }
    Ok(total)
}

/// Negative log-likelihood at `theta`, or `+inf` with the reason when the
/// likelihood cannot be evaluated.
pub fn neg_loglik(
    theta: &[f64],
    reparam: &Reparam,
    segments: &[Vec<f64>],
    base: &ModelParams,
    model: ModelKind,
    ut: &UtConfig,
) -> (f64, Option<String>) {
    let params = reparam.decode(theta, base);
    if model == ModelKind::Linear && !params.is_linear() {
        return (f64::INFINITY, Some("linear model with nonzero kappa3".into()));
    }
    match segmented_loglik(segments, &params, model, ut) {
        Ok(ll) if ll.is_finite() => (-ll, None),
        Ok(ll) => (f64::INFINITY, Some(format!("log-likelihood is {ll}"))),
        Err(e) => (f64::INFINITY, Some(e.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub max_evals: usize,
    pub grad_tol: f64,
    /// Relative step of the central-difference gradient.
    pub rel_step: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { max_evals: 20_000, grad_tol: 1e-6, rel_step: 1e-5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxEvals,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub termination: Termination,
    pub evals: usize,
    pub iterations: usize,
    pub grad_norm: f64,
    pub diagnostics: Vec<String>,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: Fn(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn gradient(&mut self, x: &[f64], fx: f64, rel_step: f64) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            let h = rel_step * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = self.eval(&probe);
            probe[i] = x[i] - h;
            let down = self.eval(&probe);
            probe[i] = x[i];
            g[i] = match (up.is_finite(), down.is_finite()) {
                (true, true) => (up - down) / (2.0 * h),
                (true, false) => (up - fx) / h,
                (false, true) => (fx - down) / h,
                (false, false) => 0.0,
            };
        }
        g
    }
}

/// BFGS minimisation with central-difference gradients and a backtracking
/// Armijo line search.
pub fn optimize<F: Fn(&[f64]) -> f64>(objective: F, theta0: &[f64], cfg: &OptimConfig) -> Result<OptimResult> {
    let mut f = Counted { f: objective, evals: 0 };
    let n = theta0.len();
    let mut x = DVector::from_column_slice(theta0);
    let mut fx = f.eval(x.as_slice());
    if !fx.is_finite() {
        return Err(Error::InvalidInput("objective is not finite at the starting point".into()));
    }
    let mut g = f.gradient(x.as_slice(), fx, cfg.rel_step);
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut diagnostics = Vec::new();

    let termination = loop {
        if g.norm() < cfg.grad_tol {
            break Termination::GradientTolerance;
        }
        if f.evals >= cfg.max_evals {
            break Termination::MaxEvals;
        }
        let mut d = -(&h_inv * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            d = -g.clone();
            slope = g.dot(&d);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + step * &d;
            let ft = f.eval(trial.as_slice());
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if !fresh {
                h_inv = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            diagnostics.push(format!("line search failed at iteration {iterations} (|grad| = {:.3e})", g.norm()));
            break Termination::LineSearchFailed;
        };
        iterations += 1;
        let g_new = f.gradient(x_new.as_slice(), f_new, cfg.rel_step);
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h_inv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - rho * &s * y.transpose();
            let right = &eye - rho * &y * s.transpose();
            h_inv = left * &h_inv * right + rho * &s * s.transpose();
            fresh = false;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    };
    Ok(OptimResult {
        x: x.as_slice().to_vec(),
        value: fx,
        converged: termination == Termination::GradientTolerance,
        termination,
        evals: f.evals,
        iterations,
        grad_norm: g.norm(),
        diagnostics,
    })
}

/// Options of the per-asset and per-class fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub alpha: f64,
    pub em_max_iter: usize,
    pub em_tol: f64,
    pub optim: OptimConfig,
    /// Number of starts of the cubic fit, the first one unperturbed.
    pub multistarts: usize,
    /// Spread of the start jitter, relative to each parameter's scale.
    pub jitter: f64,
    pub seed: u64,
    pub ut: UtConfig,
    /// Starting cubic weight of the nonlinear fit.
    pub kappa3_init: f64,
    /// Value volatility held fixed in the nonlinear fit. Defaults to the
    /// linear estimate of the same asset.
    pub sigma_v: Option<f64>,
    /// Number of class-parameter / asset-parameter passes in a class fit.
    pub alternations: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            alpha: crate::model::DEFAULT_ALPHA,
            em_max_iter: DEFAULT_MAX_ITER,
            em_tol: DEFAULT_TOL,
            optim: OptimConfig::default(),
            multistarts: 5,
            jitter: 0.2,
            seed: 0,
            ut: UtConfig::default(),
            kappa3_init: 0.1,
            sigma_v: None,
            alternations: 1,
        }
    }
}

fn checked_segments(series: &AssetSeries) -> Result<Vec<Vec<f64>>> {
    let segs = series.segment_prices();
    if segs.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no data", series.name)));
    }
    for s in &segs {
        if s.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "{}: a segment between exclusion windows has only {} months",
                series.name,
                s.len()
            )));
        }
    }
    Ok(segs)
}

/// `1 / (2 sd(m))` over the trend signals of all segments.
pub fn segmented_gamma(segments: &[Vec<f64>], alpha: f64) -> f64 {
    let m: Vec<f64> = segments.iter().flat_map(|s| trend_signal(s, alpha)).collect();
    1.0 / (2.0 * std_dev(&m))
}

/// Moment-based starting point: `gamma` from the trend rule, `v0` at the
/// first price and the noise scales from the return dispersion.
pub fn initial_params(segments: &[Vec<f64>], alpha: f64) -> ModelParams {
    let returns: Vec<f64> = segments.iter().flat_map(|s| s.windows(2).map(|w| w[1] - w[0])).collect();
    let sd = std_dev(&returns).max(1e-6);
    let mean = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
    ModelParams {
        kappa: 0.02,
        kappa3: 0.0,
        beta: 0.01,
        gamma: segmented_gamma(segments, alpha),
        alpha,
        sigma_n: sd,
        sigma_v: 0.5 * sd,
        g: mean,
        v0: segments[0][0],
        sigma0: DEFAULT_SIGMA0,
    }
}

fn scale_floor(name: &str) -> f64 {
    match name {
        "kappa" => 0.01,
        "kappa3" => 0.05,
        "g" => 1e-3,
        "v0" => 0.05,
        _ => 1.0,
    }
}

fn jittered_start(reparam: &Reparam, theta: &[f64], cfg: &FitConfig, start: usize) -> Vec<f64> {
    if start == 0 {
        return theta.to_vec();
    }
    let mut rng = path_rng(cfg.seed, start as u64);
    reparam
        .names
        .iter()
        .zip(theta)
        .map(|(n, &x)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if Reparam::is_log(n) {
                x + cfg.jitter * z
            } else {
                x + cfg.jitter * z * x.abs().max(scale_floor(n))
            }
        })
        .collect()
}

struct Maximised {
    params: ModelParams,
    loglik: f64,
    start_loglik: f64,
    optim: OptimResult,
    diagnostics: Vec<String>,
}

fn maximise(
    names: &[&str],
    segments: &[Vec<f64>],
    base: &ModelParams,
    model: ModelKind,
    cfg: &FitConfig,
    starts: usize,
) -> Result<Maximised> {
    let reparam = Reparam::new(names)?;
    let theta0 = reparam.encode(base);
    let objective = |t: &[f64]| neg_loglik(t, &reparam, segments, base, model, &cfg.ut).0;
    let (start_value, why) = neg_loglik(&theta0, &reparam, segments, base, model, &cfg.ut);
    if let Some(why) = why {
        return Err(Error::InvalidInput(format!("starting point has no likelihood: {why}")));
    }
    let runs: Vec<Result<OptimResult>> = (0..starts.max(1))
        .into_par_iter()
        .map(|s| optimize(objective, &jittered_start(&reparam, &theta0, cfg, s), &cfg.optim))
        .collect();
    let mut diagnostics = Vec::new();
    let mut best: Option<OptimResult> = None;
    for (s, run) in runs.into_iter().enumerate() {
        match run {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.value < b.value) {
                    best = Some(r);
                }
            }
            Err(e) => diagnostics.push(format!("start {s}: {e}")),
        }
    }
    let best = best.ok_or_else(|| Error::Diverged("no optimiser start produced a finite likelihood".into()))?;
    diagnostics.extend(best.diagnostics.iter().cloned());
    Ok(Maximised {
        params: reparam.decode(&best.x, base),
        loglik: -best.value,
        start_loglik: -start_value,
        optim: best,
        diagnostics,
    })
}

/// Free parameters of a single-asset fit.
pub fn asset_free_params(model: ModelKind) -> &'static [&'static str] {
    match model {
        ModelKind::Linear => &["kappa", "beta", "sigma_n", "sigma_v", "g", "v0"],
        ModelKind::Nonlinear => &["kappa", "kappa3", "beta", "sigma_n", "g", "v0"],
    }
}

fn fit_linear(segments: &[Vec<f64>], start: &ModelParams, cfg: &FitConfig) -> Result<CalibrationResult> {
    let first = &segments[0];
    let u = control_series(first, start.alpha, start.gamma);
    let mut em = em_fit(first, &u, start, cfg.em_max_iter, cfg.em_tol)?;
    if segments.len() == 1 {
        return Ok(em);
    }
    let m = maximise(asset_free_params(ModelKind::Linear), segments, &em.params, ModelKind::Linear, cfg, 1)?;
    em.loglik_trace.push(m.loglik);
    em.params = m.params;
    em.loglik = m.loglik;
    em.converged = m.optim.converged;
    em.iterations += m.optim.iterations;
    em.diagnostics.extend(m.diagnostics);
    Ok(em)
}

/// Step one of the calibration: every parameter of one asset, with `gamma`
/// fixed by the trend rule and, for the cubic model, `sigma_v` held at the
/// linear estimate (or `cfg.sigma_v`).
pub fn fit_asset(
    series: &AssetSeries,
    model: ModelKind,
    start: Option<&ModelParams>,
    cfg: &FitConfig,
) -> Result<CalibrationResult> {
    let segments = checked_segments(series)?;
    let mut base = match start {
        Some(p) => *p,
        None => initial_params(&segments, cfg.alpha),
    };
    base.kappa3 = 0.0;
    let linear = fit_linear(&segments, &base, cfg)?;
    let mut result = match model {
        ModelKind::Linear => linear,
        ModelKind::Nonlinear => {
            let mut seed = linear.params;
            seed.kappa3 = cfg.kappa3_init;
            if let Some(sv) = cfg.sigma_v {
                seed.sigma_v = sv;
            }
            let m = maximise(asset_free_params(model), &segments, &seed, model, cfg, cfg.multistarts)?;
            CalibrationResult {
                params: m.params,
                loglik: m.loglik,
                loglik_trace: vec![m.start_loglik, m.loglik],
                iterations: m.optim.iterations,
                converged: m.optim.converged,
                tstats: BTreeMap::new(),
                diagnostics: m.diagnostics,
            }
        }
    };
    mle_tstats(&mut result, series, model, cfg);
    Ok(result)
}

/// T-statistics from the numerical Hessian of the segmented predictive
/// log-likelihood. Stored in `result` and returned.
pub fn mle_tstats(result: &mut CalibrationResult, series: &AssetSeries, model: ModelKind, cfg: &FitConfig) -> BTreeMap<String, f64> {
    let names: &[&str] = match model {
        ModelKind::Linear => &LINEAR_TSTAT_PARAMS,
        ModelKind::Nonlinear => &NONLINEAR_TSTAT_PARAMS,
    };
    let segments = series.segment_prices();
    let (t, _, diag) = numerical_tstats(&result.params, names, |p| {
        segmented_loglik(&segments, p, model, &cfg.ut).ok().filter(|x| x.is_finite())
    });
    result.tstats = t.clone();
    result.diagnostics.extend(diag);
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFitSpec {
    pub assets: Vec<AssetSeries>,
    /// Parameters tied across the class, from `kappa`, `kappa3`, `beta`,
    /// `sigma_v`.
    pub shared: Vec<String>,
    pub model: ModelKind,
}

impl ClassFitSpec {
    /// Class parameters used by default: `kappa, beta, sigma_v` for the
    /// linear model and `kappa, kappa3, beta` for the cubic one.
    pub fn new(assets: Vec<AssetSeries>, model: ModelKind) -> Self {
        let shared: &[&str] = match model {
            ModelKind::Linear => &["kappa", "beta", "sigma_v"],
            ModelKind::Nonlinear => &["kappa", "kappa3", "beta"],
        };
        ClassFitSpec { assets, shared: shared.iter().map(|s| s.to_string()).collect(), model }
    }

    /// Asset-specific free parameters: the fitted ones not tied across the
    /// class.
    pub fn per_asset(&self) -> Vec<&'static str> {
        asset_free_params(self.model)
            .iter()
            .copied()
            .filter(|n| !self.shared.iter().any(|s| s == n))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetFit {
    pub name: String,
    pub params: ModelParams,
    pub loglik: f64,
    pub tstats: BTreeMap<String, f64>,
}

/// Class-fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFitResult {
    pub model: ModelKind,
    pub shared: BTreeMap<String, f64>,
    pub shared_tstats: BTreeMap<String, f64>,
    pub assets: Vec<AssetFit>,
    pub total_loglik: f64,
    /// Summed log-likelihood at the per-asset average of the class parameters.
    pub initial_total_loglik: f64,
    pub converged: bool,
    pub diagnostics: Vec<String>,
}

impl ClassFitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn with_shared(params: &ModelParams, shared: &[String], values: &ModelParams) -> ModelParams {
    let mut p = *params;
    for n in shared {
        *p.get_mut(n).unwrap() = values.get(n).unwrap();
    }
    p
}

fn class_loglik(
    segments: &[Vec<Vec<f64>>],
    assets: &[ModelParams],
    shared: &[String],
    values: &ModelParams,
    model: ModelKind,
    ut: &UtConfig,
) -> Option<f64> {
    let parts: Vec<Option<f64>> = segments
        .par_iter()
        .zip(assets.par_iter())
        .map(|(s, p)| segmented_loglik(s, &with_shared(p, shared, values), model, ut).ok())
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    total.is_finite().then_some(total)
}

/// Step two: the class parameters maximise the summed log-likelihood with
/// the asset-specific parameters held at their step-one values. With
/// `cfg.alternations > 1` the asset parameters are then refitted and the
/// class step repeated.
pub fn fit_class(spec: &ClassFitSpec, per_asset: &[CalibrationResult], cfg: &FitConfig) -> Result<ClassFitResult> {
    if spec.assets.is_empty() {
        return Err(Error::InvalidInput("class has no assets".into()));
    }
    if per_asset.len() != spec.assets.len() {
        return Err(Error::InvalidInput("one step-one result is needed per asset".into()));
    }
    for s in &spec.shared {
        if !["kappa", "kappa3", "beta", "sigma_v"].contains(&s.as_str()) {
            return Err(Error::InvalidInput(format!("'{s}' cannot be shared across a class")));
        }
    }
    let mut diagnostics = Vec::new();
    if spec.assets.len() < 2 {
        diagnostics.push("class has fewer than two assets; the class fit equals the asset fit".into());
    }
    let segments: Vec<Vec<Vec<f64>>> = spec.assets.iter().map(checked_segments).collect::<Result<_>>()?;
    let mut assets: Vec<ModelParams> = per_asset.iter().map(|r| r.params).collect();

    let mut values = assets[0];
    for n in &spec.shared {
        let mean = assets.iter().map(|p| p.get(n).unwrap()).sum::<f64>() / assets.len() as f64;
        *values.get_mut(n).unwrap() = mean;
    }
    let initial_total_loglik = class_loglik(&segments, &assets, &spec.shared, &values, spec.model, &cfg.ut)
        .ok_or_else(|| Error::Diverged("class likelihood is not finite at the averaged start".into()))?;

    let reparam = Reparam::new(&spec.shared)?;
    let mut converged = true;
    for pass in 0..cfg.alternations.max(1) {
        if pass > 0 {
            let per = spec.per_asset();
            let refits: Vec<Result<Maximised>> = segments
                .par_iter()
                .zip(assets.par_iter())
                .map(|(s, p)| maximise(&per, s, &with_shared(p, &spec.shared, &values), spec.model, cfg, 1))
                .collect();
            for (a, r) in assets.iter_mut().zip(refits) {
                *a = r?.params;
            }
        }
        let objective = |t: &[f64]| {
            let v = reparam.decode(t, &values);
            class_loglik(&segments, &assets, &spec.shared, &v, spec.model, &cfg.ut).map_or(f64::INFINITY, |x| -x)
        };
        let run = optimize(objective, &reparam.encode(&values), &cfg.optim)?;
        converged = run.converged;
        diagnostics.extend(run.diagnostics.iter().cloned());
        values = reparam.decode(&run.x, &values);
    }

    let shared_refs: Vec<&str> = spec.shared.iter().map(String::as_str).collect();
    let (shared_tstats, _, diag) = numerical_tstats(&values, &shared_refs, |v| {
        class_loglik(&segments, &assets, &spec.shared, v, spec.model, &cfg.ut)
    });
    diagnostics.extend(diag);

    let per = spec.per_asset();
    let mut fits = Vec::new();
    let mut total = 0.0;
    for (i, series) in spec.assets.iter().enumerate() {
        let params = with_shared(&assets[i], &spec.shared, &values);
        let loglik = segmented_loglik(&segments[i], &params, spec.model, &cfg.ut)?;
        total += loglik;
        let (mut tstats, _, diag) = numerical_tstats(&params, &per, |p| {
            segmented_loglik(&segments[i], p, spec.model, &cfg.ut).ok().filter(|x| x.is_finite())
        });
        diagnostics.extend(diag.into_iter().map(|d| format!("{}: {d}", series.name)));
        for (k, v) in &shared_tstats {
            tstats.insert(k.clone(), *v);
        }
        fits.push(AssetFit { name: series.name.clone(), params, loglik, tstats });
    }
    let shared = spec.shared.iter().map(|n| (n.clone(), values.get(n).unwrap())).collect();
    Ok(ClassFitResult {
        model: spec.model,
        shared,
        shared_tstats,
        assets: fits,
        total_loglik: total,
        initial_total_loglik,
        converged,
        diagnostics,
    })
}

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::trend_signal;
use crate::error::{Error, Result};

/// Regressor of the trend/value regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Const,
    M,
    M2,
    M3,
    D,
    D3,
}

impl Term {
    pub const ALL: [Term; 6] = [Term::Const, Term::M, Term::M2, Term::M3, Term::D, Term::D3];

    pub fn name(self) -> &'static str {
        match self {
            Term::Const => "const",
            Term::M => "m",
            Term::M2 => "m2",
            Term::M3 => "m3",
            Term::D => "d",
            Term::D3 => "d3",
        }
    }

    pub fn parse(s: &str) -> Option<Term> {
        Term::ALL.into_iter().find(|t| t.name() == s)
    }

    fn value(self, m: f64, d: f64) -> f64 {
        match self {
            Term::Const => 1.0,
            Term::M => m,
            Term::M2 => m * m,
            Term::M3 => m * m * m,
            Term::D => d,
            Term::D3 => d * d * d,
        }
    }

    /// The seven regressor sets reported for each model, in table order.
    pub fn table_rows() -> Vec<Vec<Term>> {
        use Term::*;
        vec![
            vec![Const, M],
            vec![Const, M, M2, M3],
            vec![Const, D],
            vec![Const, D, D3],
            vec![Const, M, D],
            vec![Const, M, M2, M3, D],
            vec![Const, M, M2, M3, D, D3],
        ]
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of one OLS regression of next-month returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub terms: Vec<Term>,
    pub coefficients: BTreeMap<String, f64>,
    pub std_errors: BTreeMap<String, f64>,
    pub tstats: BTreeMap<String, f64>,
    pub pvalues: BTreeMap<String, f64>,
    pub r2: f64,
    pub adj_r2: f64,
    pub n: usize,
}

impl RegressionReport {
    pub fn coef(&self, term: Term) -> Option<f64> {
        self.coefficients.get(term.name()).copied()
    }

    pub fn pvalue(&self, term: Term) -> Option<f64> {
        self.pvalues.get(term.name()).copied()
    }
}

/// Aligned regression inputs: `returns[i]` is the return that follows the
/// observation of `m[i]` and `d[i]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectsData {
    pub returns: Vec<f64>,
    pub m: Vec<f64>,
    /// Value signal `v - p`.
    pub d: Vec<f64>,
}

/// Builds the aligned dataset `(p[t+1] - p[t], m[t], v[t] - p[t])` from a
/// price path and the corresponding (true or smoothed) values.
pub fn effects_dataset(prices: &[f64], values: &[f64], alpha: f64) -> Result<EffectsData> {
    if prices.len() != values.len() {
        return Err(Error::InvalidInput(format!(
            "prices ({}) and values ({}) differ in length",
            prices.len(),
            values.len()
        )));
    }
    if prices.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: prices.len() });
    }
    let m = trend_signal(prices, alpha);
    let n = prices.len() - 1;
    Ok(EffectsData {
        returns: prices.windows(2).map(|w| w[1] - w[0]).collect(),
        m: m[..n].to_vec(),
        d: (0..n).map(|t| values[t] - prices[t]).collect(),
    })
}

/// OLS of `returns` on the requested `terms` with homoskedastic t-tests.
///
/// A constant is always included.
pub fn regress_effects(returns: &[f64], m: &[f64], d: &[f64], terms: &[Term]) -> Result<RegressionReport> {
    let n = returns.len();
    if m.len() != n || d.len() != n {
        return Err(Error::InvalidInput("regression inputs are not aligned".into()));
    }
    let mut cols = vec![Term::Const];
    for &t in terms {
        if !cols.contains(&t) {
            cols.push(t);
        }
    }
    let k = cols.len();
    if n <= k {
        return Err(Error::TooShort { needed: k + 1, got: n });
    }
    let x = DMatrix::from_fn(n, k, |i, j| cols[j].value(m[i], d[i]));
    let y = DVector::from_column_slice(returns);

    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r[(i, i)].abs() <= 1e-12 * scale) {
        return Err(Error::Singular("rank-deficient regression design".into()));
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("rank-deficient regression design".into()))?;
    let resid = &y - &x * &beta;
    let ssr = resid.norm_squared();
    let mean = y.mean();
    let sst = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let df = (n - k) as f64;
    let sigma2 = ssr / df;
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("rank-deficient regression design".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();

    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut report = RegressionReport {
        terms: cols.clone(),
        coefficients: BTreeMap::new(),
        std_errors: BTreeMap::new(),
        tstats: BTreeMap::new(),
        pvalues: BTreeMap::new(),
        r2: 0.0,
        adj_r2: 0.0,
        n,
    };
    for (j, term) in cols.iter().enumerate() {
        let se = (sigma2 * xtx_inv[(j, j)]).sqrt();
        let t = beta[j] / se;
        let p = if t.is_finite() { 2.0 * (1.0 - dist.cdf(t.abs())) } else { 0.0 };
        let name = term.name().to_string();
        report.coefficients.insert(name.clone(), beta[j]);
        report.std_errors.insert(name.clone(), se);
        report.tstats.insert(name.clone(), t);
        report.pvalues.insert(name, p.clamp(0.0, 1.0));
    }
    if sst > 0.0 {
        report.r2 = 1.0 - ssr / sst;
        report.adj_r2 = 1.0 - (1.0 - report.r2) * (n as f64 - 1.0) / df;
    }
    Ok(report)
}

fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = super::std_dev(x);
    if sd == 0.0 {
        return x.iter().map(|v| v - mean).collect();
    }
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Pools several assets into one regression after standardising `m` and `d`
/// per asset.
pub fn pooled_regression(datasets: &[EffectsData], terms: &[Term]) -> Result<RegressionReport> {
    let mut pooled = EffectsData::default();
    for ds in datasets {
        pooled.returns.extend_from_slice(&ds.returns);
        pooled.m.extend(standardize(&ds.m));
        pooled.d.extend(standardize(&ds.d));
    }
    regress_effects(&pooled.returns, &pooled.m, &pooled.d, terms)
}

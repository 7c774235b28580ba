//! Trend and value regressions, mispricing statistics, the Silverman
//! multimodality test and the Gordon dividend-discount benchmark.

mod distortion;
mod gordon;
mod regression;
mod silverman;

pub use distortion::{distortion_stats, histogram, DistortionStats, Histogram};
pub use gordon::gordon_value;
pub use regression::{effects_dataset, pooled_regression, regress_effects, EffectsData, RegressionReport, Term};
pub use silverman::{
    count_modes, critical_bandwidth, hall_york_adjust, silverman_test, SilvermanConfig, SilvermanResult,
};

/// EWMA of one-month log returns with decay `alpha`, started at `m[0] = 0`.
///
/// `m[t] = (1 - alpha) * m[t-1] + alpha * (p[t] - p[t-1])`, so `m[t]`
/// includes the return realised at `t`. The output has the length of
/// `prices`.
pub fn trend_signal(prices: &[f64], alpha: f64) -> Vec<f64> {
    let mut m = Vec::with_capacity(prices.len());
    if prices.is_empty() {
        return m;
    }
    m.push(0.0);
    for w in prices.windows(2) {
        let prev = *m.last().unwrap();
        m.push((1.0 - alpha) * prev + alpha * (w[1] - w[0]));
    }
    m
}

/// Sample standard deviation (denominator `n - 1`).
pub(crate) fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Fixes `gamma` as the inverse of twice the standard deviation of the
/// trend signal of `prices`.
pub fn gamma_from_trend(prices: &[f64], alpha: f64) -> f64 {
    1.0 / (2.0 * std_dev(&trend_signal(prices, alpha)))
}

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::silverman::{silverman_test, SilvermanConfig};
use crate::error::{Error, Result};

/// Equal-width histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Writes `bin_left,bin_right,count` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_left", "bin_right", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record(&[self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Histogram of `sample` with `bins` equal bins over `[min, max]`.
pub fn histogram(sample: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidInput("histogram needs at least one bin".into()));
    }
    if sample.is_empty() || sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("histogram sample must be non-empty and finite".into()));
    }
    let (mut lo, mut hi) = sample
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for &x in sample {
        let i = (((x - lo) / width).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Summary of the price distortion `p - v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionStats {
    pub variance: f64,
    /// Root mean square of the centred distortion.
    pub rms: f64,
    pub mean: f64,
    pub histogram: Histogram,
    /// Silverman p-value for each tested number of modes.
    pub silverman: BTreeMap<usize, f64>,
}

/// Variance, RMS and histogram of `p - v`, plus Silverman p-values for each
/// `k` in `modes` when `silverman` is given.
pub fn distortion_stats(
    p: &[f64],
    v: &[f64],
    bins: usize,
    silverman: Option<(&SilvermanConfig, &[usize])>,
) -> Result<DistortionStats> {
    if p.len() != v.len() {
        return Err(Error::InvalidInput("price and value series differ in length".into()));
    }
    let delta: Vec<f64> = p.iter().zip(v).map(|(a, b)| a - b).collect();
    let n = delta.len() as f64;
    let histogram = histogram(&delta, bins)?;
    let mean = delta.iter().sum::<f64>() / n;
    let variance = delta.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let mut out = DistortionStats { variance, rms: variance.sqrt(), mean, histogram, silverman: BTreeMap::new() };
    if let Some((cfg, ks)) = silverman {
        for &k in ks {
            out.silverman.insert(k, silverman_test(&delta, k, cfg)?.p_value);
        }
    }
    Ok(out)
}

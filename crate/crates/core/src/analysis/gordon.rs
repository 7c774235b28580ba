use crate::error::{Error, Result};

/// Log dividend-discount value at every observation of `dividends`.
///
/// `dividends[s]` is the payment of period `s`; `discount` and
/// `terminal_growth` are annual rates and `periods_per_year` converts them to
/// per-period rates by compounding. The value at `t` discounts the observed
/// payments after `t` and a Gordon growth block for everything after the
/// last observation:
///
/// ```text
/// V[t] = sum_{s>t} D[s] / (1+r)^(s-t) + D[T] (1+g) / ((r-g) (1+r)^(T-t))
/// ```
pub fn gordon_value(dividends: &[f64], discount: f64, terminal_growth: f64, periods_per_year: f64) -> Result<Vec<f64>> {
    if !(discount > terminal_growth) {
        return Err(Error::InvalidInput(format!(
            "discount rate {discount} must exceed terminal growth {terminal_growth}"
        )));
    }
    if !(discount > 0.0) || !(periods_per_year > 0.0) {
        return Err(Error::InvalidInput("discount rate and periods per year must be positive".into()));
    }
    if dividends.is_empty() || dividends.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::InvalidInput("dividends must be a non-empty series of positive values".into()));
    }
    let r = (1.0 + discount).powf(1.0 / periods_per_year) - 1.0;
    let g = (1.0 + terminal_growth).powf(1.0 / periods_per_year) - 1.0;
    let last = *dividends.last().unwrap();

    // Backward accumulation: W[t] = (D[t+1] + W[t+1]) / (1 + r).
    let n = dividends.len();
    let mut values = vec![0.0; n];
    let mut acc = last * (1.0 + g) / (r - g);
    values[n - 1] = acc;
    for t in (0..n - 1).rev() {
        acc = (dividends[t + 1] + acc) / (1.0 + r);
        values[t] = acc;
    }
    Ok(values.into_iter().map(f64::ln).collect())
}

//! Monthly price series: CSV ingestion, CPI deflation, exclusion windows and
//! the dataset manifest.
//!
//! Input files have a header `date,price` with ISO dates and positive
//! nominal prices, optionally followed by a `cpi` column. Files written by
//! [`write_series`] carry `log_price` instead of `price` and load back
//! bit-for-bit.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetClass {
    Index,
    Commodity,
    Fx,
    Bond,
}

impl AssetClass {
    pub fn name(self) -> &'static str {
        match self {
            AssetClass::Index => "index",
            AssetClass::Commodity => "commodity",
            AssetClass::Fx => "fx",
            AssetClass::Bond => "bond",
        }
    }
}

impl fmt::Display for AssetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AssetClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "index" => Ok(AssetClass::Index),
            "commodity" => Ok(AssetClass::Commodity),
            "fx" => Ok(AssetClass::Fx),
            "bond" => Ok(AssetClass::Bond),
            other => Err(Error::InvalidInput(format!("unknown asset class '{other}'"))),
        }
    }
}

/// Inclusive range of months removed from estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSeries {
    pub name: String,
    pub asset_class: AssetClass,
    pub dates: Vec<NaiveDate>,
    pub log_price: Vec<f64>,
    #[serde(default)]
    pub excluded: Vec<DateRange>,
}

/// A contiguous run of non-excluded months.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Index of the first month in the parent series.
    pub start: usize,
    pub dates: Vec<NaiveDate>,
    pub log_price: Vec<f64>,
}

impl AssetSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn is_excluded(&self, i: usize) -> bool {
        self.excluded.iter().any(|w| w.contains(self.dates[i]))
    }

    /// Contiguous non-excluded runs. No return is taken across a gap.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out: Vec<Segment> = Vec::new();
        let mut open = false;
        for i in 0..self.len() {
            if self.is_excluded(i) {
                open = false;
                continue;
            }
            if !open {
                out.push(Segment { start: i, dates: Vec::new(), log_price: Vec::new() });
                open = true;
            }
            let seg = out.last_mut().unwrap();
            seg.dates.push(self.dates[i]);
            seg.log_price.push(self.log_price[i]);
        }
        out
    }

    /// Log prices of every segment.
    pub fn segment_prices(&self) -> Vec<Vec<f64>> {
        self.segments().into_iter().map(|s| s.log_price).collect()
    }
}

/// Consumer price index keyed by month.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CpiSeries {
    pub values: BTreeMap<NaiveDate, f64>,
}

fn month_index(d: NaiveDate) -> i64 {
    d.year() as i64 * 12 + d.month0() as i64
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn parse_date(path: &Path, line: usize, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| parse_err(path, line, format!("bad date '{s}': {e}")))
}

fn parse_number(path: &Path, line: usize, what: &str, s: &str) -> Result<f64> {
    let x: f64 = s.trim().parse().map_err(|_| parse_err(path, line, format!("bad {what} '{s}'")))?;
    if !x.is_finite() {
        return Err(parse_err(path, line, format!("{what} is not finite")));
    }
    Ok(x)
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

/// Reads a price file. Returns the log-price series and the CPI column when
/// present.
pub fn load_series(path: impl AsRef<Path>, name: &str, class: AssetClass) -> Result<(AssetSeries, Option<CpiSeries>)> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let date_col = column(&headers, "date").ok_or_else(|| parse_err(path, 1, "missing 'date' column"))?;
    let (price_col, is_log) = match (column(&headers, "price"), column(&headers, "log_price")) {
        (Some(c), _) => (c, false),
        (None, Some(c)) => (c, true),
        (None, None) => return Err(parse_err(path, 1, "missing 'price' column")),
    };
    let cpi_col = column(&headers, "cpi");

    let mut series = AssetSeries {
        name: name.to_string(),
        asset_class: class,
        dates: Vec::new(),
        log_price: Vec::new(),
        excluded: Vec::new(),
    };
    let mut cpi = CpiSeries::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let field = |i: usize| rec.get(i).ok_or_else(|| parse_err(path, line, "missing field"));
        let date = parse_date(path, line, field(date_col)?)?;
        let raw = parse_number(path, line, "price", field(price_col)?)?;
        let lp = if is_log {
            raw
        } else {
            if raw <= 0.0 {
                return Err(parse_err(path, line, format!("price must be positive, got {raw}")));
            }
            raw.ln()
        };
        if let Some(&prev) = series.dates.last() {
            if date == prev {
                return Err(parse_err(path, line, format!("duplicate date {date}")));
            }
            if month_index(date) != month_index(prev) + 1 {
                return Err(parse_err(path, line, format!("{date} does not follow {prev} by one month")));
            }
        }
        if let Some(c) = cpi_col {
            let v = parse_number(path, line, "cpi", field(c)?)?;
            if v <= 0.0 {
                return Err(parse_err(path, line, format!("cpi must be positive, got {v}")));
            }
            cpi.values.insert(date, v);
        }
        series.dates.push(date);
        series.log_price.push(lp);
    }
    if series.is_empty() {
        return Err(parse_err(path, 1, "no observations"));
    }
    Ok((series, cpi_col.map(|_| cpi)))
}

/// Reads a CPI file with header `date,cpi`.
pub fn load_cpi(path: impl AsRef<Path>) -> Result<CpiSeries> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let date_col = column(&headers, "date").ok_or_else(|| parse_err(path, 1, "missing 'date' column"))?;
    let cpi_col = column(&headers, "cpi").ok_or_else(|| parse_err(path, 1, "missing 'cpi' column"))?;
    let mut cpi = CpiSeries::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let date = parse_date(path, line, rec.get(date_col).unwrap_or(""))?;
        let v = parse_number(path, line, "cpi", rec.get(cpi_col).unwrap_or(""))?;
        if v <= 0.0 {
            return Err(parse_err(path, line, format!("cpi must be positive, got {v}")));
        }
        if cpi.values.insert(date, v).is_some() {
            return Err(parse_err(path, line, format!("duplicate date {date}")));
        }
    }
    Ok(cpi)
}

/// Converts nominal log prices into prices in money of the last month.
pub fn deflate(series: &AssetSeries, cpi: &CpiSeries) -> Result<AssetSeries> {
    let lookup = |d: &NaiveDate| {
        cpi.values
            .get(d)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("{}: no CPI for {d}", series.name)))
    };
    let last = lookup(series.dates.last().ok_or_else(|| Error::InvalidInput("empty series".into()))?)?;
    let mut out = series.clone();
    for (lp, d) in out.log_price.iter_mut().zip(&series.dates) {
        *lp += (last / lookup(d)?).ln();
    }
    Ok(out)
}

/// Marks the months inside `windows` as excluded.
pub fn apply_exclusions(series: &AssetSeries, windows: &[DateRange]) -> Result<AssetSeries> {
    for w in windows {
        if w.start > w.end {
            return Err(Error::InvalidInput(format!("exclusion window {} .. {} is reversed", w.start, w.end)));
        }
    }
    let mut out = series.clone();
    out.excluded.extend_from_slice(windows);
    if (0..out.len()).all(|i| out.is_excluded(i)) {
        return Err(Error::InvalidInput(format!("{}: no data remains after exclusions", series.name)));
    }
    Ok(out)
}

/// Writes `date,log_price` with shortest round-trip float formatting.
pub fn write_series<W: Write>(series: &AssetSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "log_price"])?;
    for (d, lp) in series.dates.iter().zip(&series.log_price) {
        w.write_record([d.format("%Y-%m-%d").to_string(), lp.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Reads a dividend file with header `date,dividend`.
pub fn load_dividends(path: impl AsRef<Path>) -> Result<(Vec<NaiveDate>, Vec<f64>)> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let date_col = column(&headers, "date").ok_or_else(|| parse_err(path, 1, "missing 'date' column"))?;
    let div_col = column(&headers, "dividend").ok_or_else(|| parse_err(path, 1, "missing 'dividend' column"))?;
    let (mut dates, mut divs) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        dates.push(parse_date(path, line, rec.get(date_col).unwrap_or(""))?);
        let d = parse_number(path, line, "dividend", rec.get(div_col).unwrap_or(""))?;
        if d <= 0.0 {
            return Err(parse_err(path, line, format!("dividend must be positive, got {d}")));
        }
        divs.push(d);
    }
    Ok((dates, divs))
}

/// One asset entry of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetEntry {
    pub name: String,
    pub class: AssetClass,
    pub path: PathBuf,
    /// Separate CPI file; a `cpi` column in the price file is used otherwise.
    #[serde(default)]
    pub cpi: Option<PathBuf>,
    #[serde(default)]
    pub exclude: Vec<DateRange>,
    /// Dividend file for the Gordon benchmark.
    #[serde(default)]
    pub dividends: Option<PathBuf>,
}

/// Dataset description, read from TOML:
///
/// ```toml
/// alpha = 0.142857   # or: tau = 6, meaning alpha = 1 / (1 + tau)
///
/// [[assets]]
/// name = "US"
/// class = "index"
/// path = "us.csv"
/// cpi = "us_cpi.csv"
/// exclude = [{ start = "1941-12-01", end = "1948-12-01" }]
/// ```
///
/// Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub alpha: f64,
    pub assets: Vec<AssetEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    alpha: Option<f64>,
    /// Trend horizon in months.
    tau: Option<f64>,
    #[serde(default)]
    assets: Vec<AssetEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: RawManifest =
            toml::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let alpha = match (raw.alpha, raw.tau) {
            (Some(_), Some(_)) => return Err(Error::Manifest("give either alpha or tau, not both".into())),
            (Some(a), None) => a,
            (None, Some(tau)) if tau >= 0.0 => 1.0 / (1.0 + tau),
            (None, Some(tau)) => return Err(Error::Manifest(format!("tau must be non-negative, got {tau}"))),
            (None, None) => crate::model::DEFAULT_ALPHA,
        };
        let m = DatasetManifest {
            alpha,
            assets: raw.assets,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        if !(m.alpha > 0.0 && m.alpha <= 1.0) {
            return Err(Error::Manifest(format!("alpha must lie in (0, 1], got {}", m.alpha)));
        }
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Loads, deflates and windows one asset.
    pub fn load_asset(&self, entry: &AssetEntry) -> Result<AssetSeries> {
        let (series, inline_cpi) = load_series(self.resolve(&entry.path), &entry.name, entry.class)?;
        let cpi = match &entry.cpi {
            Some(p) => Some(load_cpi(self.resolve(p))?),
            None => inline_cpi,
        };
        let series = match cpi {
            Some(c) => deflate(&series, &c)?,
            None => series,
        };
        apply_exclusions(&series, &entry.exclude)
    }
}

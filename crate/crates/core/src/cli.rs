//! Batch front end: `simulate`, `fit`, `analyze` and `report`.
//!
//! Every run writes `run_manifest.json` next to its outputs. Passing that
//! file back with `--replay` repeats the run and reproduces the outputs
//! byte for byte. Output is JSON and CSV only.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    distortion_stats, effects_dataset, gordon_value, histogram, pooled_regression, regress_effects, trend_signal,
    DistortionStats, EffectsData, RegressionReport, SilvermanConfig, Term,
};
use crate::data_io::{load_dividends, AssetClass, AssetSeries, DatasetManifest};
use crate::em::{CalibrationResult, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::kalman::{control_series, kf_forward, rts_smooth, SmoothOutput};
use crate::mle::{fit_asset, fit_class, segment_params, ClassFitResult, ClassFitSpec, FitConfig, OptimConfig};
use crate::model::{MarketState, ModelKind, ModelParams};
use crate::simulate::{
    detect_limit_cycle, integrate_deterministic, simulate_paths, CycleReport, DEFAULT_DT, DEFAULT_TRANSIENT_FRACTION,
};
use crate::ukf::{ukf_forward, ukf_smooth, UtConfig};

/// Name of the manifest written into every output directory.
pub const RUN_MANIFEST: &str = "run_manifest.json";
/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "CHIARELLA_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "chiarella", version, about = "Simulate and calibrate the Chiarella market model")]
pub struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,

    /// Re-run the command recorded in a run manifest.
    #[arg(long, value_name = "RUN_MANIFEST")]
    pub replay: Option<PathBuf>,

    /// Output directory for `--replay` (default: the recorded one).
    #[arg(long, requires = "replay")]
    pub replay_out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Simulate the model and summarise the paths.
    Simulate(SimulateArgs),
    /// Calibrate a dataset with the two-step per-asset / per-class protocol.
    Fit(FitArgs),
    /// Regressions, mispricing statistics and the Gordon benchmark of a fit.
    Analyze(AnalyzeArgs),
    /// Parameter and t-statistic tables from a fit directory.
    Report(ReportArgs),
}

impl Command {
    fn out_dir(&self) -> &Path {
        match self {
            Command::Simulate(a) => &a.out,
            Command::Fit(a) => &a.out,
            Command::Analyze(a) => &a.out,
            Command::Report(a) => &a.out,
        }
    }

    fn set_out_dir(&mut self, out: PathBuf) {
        match self {
            Command::Simulate(a) => a.out = out,
            Command::Fit(a) => a.out = out,
            Command::Analyze(a) => a.out = out,
            Command::Report(a) => a.out = out,
        }
    }
}

/// Full record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    #[serde(flatten)]
    pub command: Command,
}

impl RunManifest {
    pub fn new(command: Command) -> Self {
        RunManifest { version: env!("CARGO_PKG_VERSION").to_string(), command }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Linear model estimated for the US index.
    Table3,
    /// Cubic model estimated for the US index.
    Table5,
    /// Deterministic limit cycle example.
    Fig2,
    /// Bimodal mispricing example.
    Fig12,
    /// Linear model without any noise or drift.
    ZeroNoise,
}

impl Preset {
    pub fn params(self) -> ModelParams {
        match self {
            Preset::Table3 => ModelParams::table3_us(),
            Preset::Table5 => ModelParams::table5_us(),
            Preset::Fig2 => ModelParams::fig2(),
            Preset::Fig12 => ModelParams::fig12(),
            Preset::ZeroNoise => ModelParams { sigma_n: 0.0, sigma_v: 0.0, g: 0.0, ..ModelParams::table3_us() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "table3")]
    pub preset: Preset,
    /// JSON file with a full parameter set, overriding the preset.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub length: usize,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub bins: usize,
    /// Silverman bootstrap resamples; 0 skips the test.
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    /// Horizon of the noise-free integration, in months.
    #[arg(long, default_value_t = 3000.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = DEFAULT_DT)]
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Dataset manifest (TOML).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "linear")]
    pub model: ModelArg,
    /// Restrict the fit to one asset class.
    #[arg(long, value_parser = parse_class)]
    pub class: Option<AssetClass>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_evals: usize,
    #[arg(long, default_value_t = 5)]
    pub multistarts: usize,
    #[arg(long, default_value_t = 1)]
    pub alternations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    Linear,
    Nonlinear,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Linear => ModelKind::Linear,
            ModelArg::Nonlinear => ModelKind::Nonlinear,
        }
    }
}

fn parse_class(s: &str) -> std::result::Result<AssetClass, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    /// Dataset manifest (TOML).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory of a `fit` run.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub bins: usize,
    /// Silverman bootstrap resamples; 0 skips the test.
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    /// Compute the dividend-discount benchmark (needs dividend files).
    #[arg(long)]
    pub gordon: bool,
    #[arg(long, default_value_t = 0.068)]
    pub discount: f64,
    #[arg(long, default_value_t = 0.022)]
    pub terminal_growth: f64,
    #[arg(long, default_value_t = 12.0)]
    pub periods_per_year: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Output directory of a `fit` run.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not size the worker pool: {e}");
        }
    }
    let command = match (cli.replay, cli.command) {
        (Some(_), Some(_)) => {
            eprintln!("error: --replay cannot be combined with a subcommand");
            return 2;
        }
        (Some(path), None) => match RunManifest::load(&path) {
            Ok(m) => {
                let mut c = m.command;
                if let Some(out) = cli.replay_out {
                    c.set_out_dir(out);
                }
                c
            }
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        },
        (None, Some(c)) => c,
        (None, None) => {
            eprintln!("error: a subcommand or --replay is required (see --help)");
            return 2;
        }
    };
    match run(&command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Runs one command and writes its manifest.
pub fn run(command: &Command) -> Result<()> {
    let out = command.out_dir();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(RUN_MANIFEST), &RunManifest::new(command.clone()))?;
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Summary statistics of one simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub params: ModelParams,
    pub length: usize,
    pub seed: u64,
    pub distortion: DistortionStats,
    pub trend: DistortionStats,
}

/// Noise-free behaviour at the simulated parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSummary {
    pub bifurcation_margin: Option<f64>,
    pub report: Option<CycleReport>,
    pub note: Option<String>,
}

fn silverman_for(sample_var: f64, bootstrap: usize, seed: u64) -> Option<SilvermanConfig> {
    (bootstrap > 0 && sample_var > 0.0).then(|| SilvermanConfig { bootstrap, seed, ..Default::default() })
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn summarise(p: &[f64], v: &[f64], bins: usize, bootstrap: usize, seed: u64, ks: &[usize]) -> Result<DistortionStats> {
    let delta: Vec<f64> = p.iter().zip(v).map(|(a, b)| a - b).collect();
    let cfg = silverman_for(sample_variance(&delta), bootstrap, seed);
    distortion_stats(p, v, bins, cfg.as_ref().map(|c| (c, ks)))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let params = match &a.params {
        Some(p) => read_json::<ModelParams>(p)?,
        None => a.preset.params(),
    };
    let paths = simulate_paths(&params, a.length, a.seed, a.paths.max(1))?;
    for (i, path) in paths.iter().enumerate() {
        let name = if paths.len() == 1 { "path.csv".to_string() } else { format!("path_{i}.csv") };
        path.write_csv(create(&a.out.join(name))?)?;
    }
    let first = &paths[0];
    let zeros = vec![0.0; first.len()];
    let distortion = summarise(&first.p, &first.v, a.bins, a.bootstrap, a.seed, &[1, 2])?;
    let trend = summarise(&first.m, &zeros, a.bins, a.bootstrap, a.seed, &[1, 2])?;
    distortion.histogram.write_csv(create(&a.out.join("hist_delta.csv"))?)?;
    trend.histogram.write_csv(create(&a.out.join("hist_m.csv"))?)?;
    write_json(
        &a.out.join("summary.json"),
        &SimulationSummary { params, length: a.length, seed: a.seed, distortion, trend },
    )?;

    let cycle = if params.is_linear() {
        let start = MarketState::new(params.v0 + 0.1, 0.0, params.v0);
        let report = integrate_deterministic(&params, start, a.dt, a.horizon)
            .and_then(|t| detect_limit_cycle(&t, DEFAULT_TRANSIENT_FRACTION));
        match report {
            Ok(r) => CycleSummary {
                bifurcation_margin: Some(crate::model::bifurcation_margin(&params)),
                report: Some(r),
                note: None,
            },
            Err(e) => CycleSummary {
                bifurcation_margin: Some(crate::model::bifurcation_margin(&params)),
                report: None,
                note: Some(e.to_string()),
            },
        }
    } else {
        CycleSummary {
            bifurcation_margin: None,
            report: None,
            note: Some("the cycle analysis covers the linear model only".into()),
        }
    };
    write_json(&a.out.join("cycle.json"), &cycle)
}

fn fit_config(a: &FitArgs, alpha: f64) -> FitConfig {
    FitConfig {
        alpha,
        em_max_iter: a.max_iter,
        em_tol: a.tol,
        optim: OptimConfig { max_evals: a.max_evals, ..Default::default() },
        multistarts: a.multistarts,
        seed: a.seed,
        alternations: a.alternations,
        ..Default::default()
    }
}

/// Per-asset and per-class outcome of a `fit` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: ModelKind,
    pub classes: Vec<AssetClass>,
    pub assets: Vec<String>,
    pub failures: BTreeMap<String, String>,
}

fn load_assets(manifest: &DatasetManifest, class: Option<AssetClass>) -> Result<(Vec<AssetSeries>, BTreeMap<String, String>)> {
    let entries: Vec<_> = manifest.assets.iter().filter(|e| class.is_none_or(|c| e.class == c)).collect();
    if entries.is_empty() {
        return Err(Error::InvalidInput("the dataset manifest selects no assets".into()));
    }
    let mut series = Vec::new();
    let mut failures = BTreeMap::new();
    for e in entries {
        match manifest.load_asset(e) {
            Ok(s) => series.push(s),
            Err(err) => {
                failures.insert(e.name.clone(), err.to_string());
            }
        }
    }
    Ok((series, failures))
}

fn step_one(
    assets: &[AssetSeries],
    model: ModelKind,
    cfg: &FitConfig,
    failures: &mut BTreeMap<String, String>,
) -> Vec<(AssetSeries, CalibrationResult)> {
    let results: Vec<Result<CalibrationResult>> = assets.par_iter().map(|s| fit_asset(s, model, None, cfg)).collect();
    let mut ok = Vec::new();
    for (s, r) in assets.iter().zip(results) {
        match r {
            Ok(r) => ok.push((s.clone(), r)),
            Err(e) => {
                failures.insert(s.name.clone(), e.to_string());
            }
        }
    }
    ok
}

fn fit_classes(
    fitted: &[(AssetSeries, CalibrationResult)],
    model: ModelKind,
    cfg: &FitConfig,
    failures: &mut BTreeMap<String, String>,
) -> BTreeMap<AssetClass, ClassFitResult> {
    let mut by_class: BTreeMap<AssetClass, Vec<&(AssetSeries, CalibrationResult)>> = BTreeMap::new();
    for f in fitted {
        by_class.entry(f.0.asset_class).or_default().push(f);
    }
    let mut out = BTreeMap::new();
    for (class, members) in by_class {
        let spec = ClassFitSpec::new(members.iter().map(|m| m.0.clone()).collect(), model);
        let step1: Vec<CalibrationResult> = members.iter().map(|m| m.1.clone()).collect();
        match fit_class(&spec, &step1, cfg) {
            Ok(r) => {
                out.insert(class, r);
            }
            Err(e) => {
                failures.insert(format!("class:{class}"), e.to_string());
            }
        }
    }
    out
}

/// Smoothed value of every month of `series` under `params`; excluded months
/// are left out.
pub fn smoothed_values(series: &AssetSeries, params: &ModelParams, model: ModelKind) -> Result<Vec<(usize, f64, f64)>> {
    let mut rows = Vec::new();
    for (i, seg) in series.segments().iter().enumerate() {
        let p = segment_params(params, i, seg.log_price[0]);
        let u = control_series(&seg.log_price, p.alpha, p.gamma);
        let smooth: SmoothOutput = match model {
            ModelKind::Linear => rts_smooth(&kf_forward(&seg.log_price, &u, &p)?),
            ModelKind::Nonlinear => ukf_smooth(&ukf_forward(&seg.log_price, &u, &p, &UtConfig::default())?),
        };
        // smooth[t] is the value behind the return from month t to t + 1; the
        // last month carries the predicted value one step ahead.
        for t in 0..seg.log_price.len() {
            let (mean, var) = if t < smooth.len() {
                (smooth.v_smooth[t], smooth.var_smooth[t])
            } else {
                let last = smooth.len() - 1;
                (smooth.v_smooth[last] + p.g, smooth.var_smooth[last] + p.sigma_v * p.sigma_v)
            };
            rows.push((seg.start + t, mean, var.sqrt()));
        }
    }
    Ok(rows)
}

fn write_smoothed(path: &Path, series: &AssetSeries, rows: &[(usize, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["date", "log_price", "v_smooth", "v_lower", "v_upper"])?;
    for &(i, v, sd) in rows {
        w.write_record([
            series.dates[i].format("%Y-%m-%d").to_string(),
            series.log_price[i].to_string(),
            v.to_string(),
            (v - sd).to_string(),
            (v + sd).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let (assets, mut failures) = load_assets(&manifest, a.class)?;
    let mut cfg = fit_config(a, manifest.alpha);
    let model: ModelKind = a.model.into();

    let linear = step_one(&assets, ModelKind::Linear, &cfg, &mut failures);
    let mut classes = fit_classes(&linear, ModelKind::Linear, &cfg, &mut failures);
    let mut step1 = linear;
    if model == ModelKind::Nonlinear {
        // The value volatility of the cubic fit stays at the linear class value.
        let mut nonlinear = Vec::new();
        for (class, fit) in &classes {
            cfg.sigma_v = fit.shared.get("sigma_v").copied();
            let members: Vec<AssetSeries> = step1.iter().filter(|s| s.0.asset_class == *class).map(|s| s.0.clone()).collect();
            nonlinear.extend(step_one(&members, model, &cfg, &mut failures));
        }
        classes = fit_classes(&nonlinear, model, &cfg, &mut failures);
        step1 = nonlinear;
    }

    let assets_dir = a.out.join("assets");
    let smooth_dir = a.out.join("smoothed");
    for d in [&assets_dir, &smooth_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for (series, result) in &step1 {
        write_json(&assets_dir.join(format!("{}.json", file_stem(&series.name))), result)?;
    }
    for (class, fit) in &classes {
        write_json(&a.out.join(format!("class_{class}.json")), fit)?;
        for af in &fit.assets {
            let Some((series, _)) = step1.iter().find(|s| s.0.name == af.name) else { continue };
            match smoothed_values(series, &af.params, model) {
                Ok(rows) => write_smoothed(&smooth_dir.join(format!("{}.csv", file_stem(&af.name))), series, &rows)?,
                Err(e) => {
                    failures.insert(af.name.clone(), e.to_string());
                }
            }
        }
    }
    let summary = FitSummary {
        model,
        classes: classes.keys().copied().collect(),
        assets: step1.iter().map(|s| s.0.name.clone()).collect(),
        failures: failures.clone(),
    };
    write_json(&a.out.join("fit_summary.json"), &summary)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Diverged(format!(
            "failed: {}",
            failures.iter().map(|(k, v)| format!("{k} ({v})")).collect::<Vec<_>>().join("; ")
        )))
    }
}

/// Regression table of one asset or pooled class, one report per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTable {
    pub name: String,
    pub rows: Vec<RegressionReport>,
}

fn regression_table(name: &str, data: &[EffectsData], pooled: bool) -> Result<RegressionTable> {
    let rows = Term::table_rows()
        .iter()
        .map(|terms| {
            if pooled {
                pooled_regression(data, terms)
            } else {
                regress_effects(&data[0].returns, &data[0].m, &data[0].d, terms)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegressionTable { name: name.to_string(), rows })
}

/// Outputs of `analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub regressions: Vec<RegressionTable>,
    pub distortion: BTreeMap<String, DistortionStats>,
    /// Mean distortion variance over all assets.
    pub mean_variance: f64,
}

fn load_class_fits(dir: &Path) -> Result<Vec<ClassFitResult>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("class_") && n.ends_with(".json"))
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidInput(format!("{} holds no class fits", dir.display())));
    }
    names.iter().map(|p| read_json(p)).collect()
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let fits = load_class_fits(&a.fit)?;
    if a.gordon {
        let missing: Vec<&str> = manifest
            .assets
            .iter()
            .filter(|e| e.dividends.is_none() && fits.iter().any(|f| f.assets.iter().any(|x| x.name == e.name)))
            .map(|e| e.name.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::InvalidInput(format!("no dividend file for {}", missing.join(", "))));
        }
    }
    let hist_dir = a.out.join("histograms");
    fs::create_dir_all(&hist_dir).map_err(|e| Error::io(&hist_dir, e))?;

    let mut regressions = Vec::new();
    let mut distortion = BTreeMap::new();
    for fit in &fits {
        let mut class_data = Vec::new();
        for af in &fit.assets {
            let entry = manifest
                .assets
                .iter()
                .find(|e| e.name == af.name)
                .ok_or_else(|| Error::InvalidInput(format!("{} is not in the dataset manifest", af.name)))?;
            let series = manifest.load_asset(entry)?;
            let rows = smoothed_values(&series, &af.params, fit.model)?;
            let mut asset_data = EffectsData::default();
            let (mut p_all, mut v_all) = (Vec::new(), Vec::new());
            for seg in series.segments() {
                let idx: Vec<&(usize, f64, f64)> = rows.iter().filter(|r| r.0 >= seg.start && r.0 < seg.start + seg.log_price.len()).collect();
                let v: Vec<f64> = idx.iter().map(|r| r.1).collect();
                let d = effects_dataset(&seg.log_price, &v, af.params.alpha)?;
                asset_data.returns.extend(d.returns);
                asset_data.m.extend(d.m);
                asset_data.d.extend(d.d);
                p_all.extend_from_slice(&seg.log_price);
                v_all.extend(v);
            }
            regressions.push(regression_table(&af.name, std::slice::from_ref(&asset_data), false)?);
            class_data.push(asset_data);

            let stats = summarise(&p_all, &v_all, a.bins, a.bootstrap, a.seed, &[1, 2])?;
            stats.histogram.write_csv(create(&hist_dir.join(format!("delta_{}.csv", file_stem(&af.name))))?)?;
            let m: Vec<f64> = series.segments().iter().flat_map(|s| trend_signal(&s.log_price, af.params.alpha)).collect();
            histogram(&m, a.bins)?.write_csv(create(&hist_dir.join(format!("m_{}.csv", file_stem(&af.name))))?)?;
            distortion.insert(af.name.clone(), stats);

            if a.gordon {
                let path = manifest.resolve(entry.dividends.as_ref().unwrap());
                let (dates, divs) = load_dividends(&path)?;
                let values = gordon_value(&divs, a.discount, a.terminal_growth, a.periods_per_year)?;
                let out = a.out.join(format!("gordon_{}.csv", file_stem(&af.name)));
                let mut w = csv::Writer::from_writer(create(&out)?);
                w.write_record(["date", "log_value"])?;
                for (d, v) in dates.iter().zip(&values) {
                    w.write_record([d.format("%Y-%m-%d").to_string(), v.to_string()])?;
                }
                w.flush().map_err(|e| Error::io(&out, e))?;
            }
        }
        regressions.push(regression_table(&format!("class:{}", class_name(fit)), &class_data, true)?);
    }
    let mean_variance = distortion.values().map(|d| d.variance).sum::<f64>() / distortion.len().max(1) as f64;
    write_json(&a.out.join("analysis.json"), &AnalysisSummary { regressions, distortion, mean_variance })
}

fn class_name(fit: &ClassFitResult) -> String {
    fit.assets.iter().map(|a| a.name.as_str()).collect::<Vec<_>>().join("+")
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let fits = load_class_fits(&a.fit)?;
    let columns = ["kappa", "kappa3", "beta", "gamma", "sigma_n", "sigma_v", "g", "v0"];
    let params_path = a.out.join("parameters.csv");
    let mut w = csv::Writer::from_writer(create(&params_path)?);
    let mut header = vec!["asset", "model"];
    header.extend(columns);
    header.push("loglik");
    w.write_record(&header)?;
    let tstats_path = a.out.join("tstats.csv");
    let mut t = csv::Writer::from_writer(create(&tstats_path)?);
    let t_columns = ["kappa", "kappa3", "beta", "sigma_n", "sigma_v", "g", "v0"];
    let mut t_header = vec!["asset", "model"];
    t_header.extend(t_columns);
    t.write_record(&t_header)?;
    let mut total = 0.0;
    for fit in &fits {
        for af in &fit.assets {
            let mut row = vec![af.name.clone(), fit.model.to_string()];
            row.extend(columns.iter().map(|c| af.params.get(c).unwrap().to_string()));
            row.push(af.loglik.to_string());
            w.write_record(&row)?;
            let mut trow = vec![af.name.clone(), fit.model.to_string()];
            trow.extend(t_columns.iter().map(|c| af.tstats.get(*c).map(|v| v.to_string()).unwrap_or_default()));
            t.write_record(&trow)?;
            total += af.loglik;
        }
    }
    w.flush().map_err(|e| Error::io(&params_path, e))?;
    t.flush().map_err(|e| Error::io(&tstats_path, e))?;
    #[derive(Serialize)]
    struct Totals {
        classes: usize,
        assets: usize,
        total_loglik: f64,
    }
    write_json(
        &a.out.join("report.json"),
        &Totals { classes: fits.len(), assets: fits.iter().map(|f| f.assets.len()).sum(), total_loglik: total },
    )
}

//! Fits the cubic-demand model with the unscented filter and compares it
//! against the linear fit on the same data.
//!
//! ```bash
//! cargo run --release --example cubic_mle
//! ```

use chiarella::data_io::{AssetClass, AssetSeries};
use chiarella::mle::{fit_asset, FitConfig};
use chiarella::simulate::simulate_path;
use chiarella::ukf::{ukf_forward, ukf_predictive_loglik, UtConfig};
use chiarella::{ModelKind, ModelParams};

fn main() -> chiarella::Result<()> {
    let truth = ModelParams { kappa3: 2.0, sigma_v: 0.05, ..ModelParams::table5_us() };
    let path = simulate_path(&truth, 1800, 17)?;
    let start = chrono::NaiveDate::from_ymd_opt(1871, 1, 1).unwrap();
    let series = AssetSeries {
        name: "synthetic".into(),
        asset_class: AssetClass::Index,
        dates: (0..path.p.len()).map(|i| start + chrono::Months::new(i as u32)).collect(),
        log_price: path.p.clone(),
        excluded: Vec::new(),
    };

    let u = chiarella::kalman::control_series(&path.p, truth.alpha, truth.gamma);
    let at_truth = ukf_forward(&path.p, &u, &truth, &UtConfig::default())?;
    println!("UKF loglik at truth: {:.2}", ukf_predictive_loglik(&at_truth));

    let cfg = FitConfig { multistarts: 3, ..Default::default() };
    let linear = fit_asset(&series, ModelKind::Linear, None, &cfg)?;
    let cubic = fit_asset(&series, ModelKind::Nonlinear, None, &FitConfig { sigma_v: Some(linear.params.sigma_v), ..cfg })?;
    println!("linear loglik {:.2}, cubic loglik {:.2}", linear.loglik, cubic.loglik);
    for name in ["kappa", "kappa3", "beta", "sigma_n", "g"] {
        println!(
            "  {name:<8} true {:>8.4}  fit {:>8.4}  t {:>6.1}",
            truth.get(name).unwrap(),
            cubic.params.get(name).unwrap(),
            cubic.tstats.get(name).copied().unwrap_or(f64::NAN)
        );
    }
    for d in &cubic.diagnostics {
        println!("  note: {d}");
    }
    Ok(())
}

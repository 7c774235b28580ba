//! Filters a simulated linear market and calibrates it by EM.
//!
//! ```bash
//! cargo run --release --example kalman_em
//! ```

use chiarella::analysis::gamma_from_trend;
use chiarella::em::{em_fit, em_tstats, DEFAULT_TOL};
use chiarella::kalman::{control_series, kf_forward, kf_predictive_loglik, rts_smooth};
use chiarella::simulate::simulate_path;
use chiarella::ModelParams;

fn main() -> chiarella::Result<()> {
    let mut truth = ModelParams::table3_us();
    truth.kappa = 0.08;
    let path = simulate_path(&truth, 1200, 42)?;

    // gamma is not estimated; it comes from the spread of the trend signal.
    let gamma = gamma_from_trend(&path.p, truth.alpha);
    let u = control_series(&path.p, truth.alpha, gamma);

    let filt = kf_forward(&path.p, &u, &ModelParams { gamma, ..truth })?;
    let smooth = rts_smooth(&filt);
    let err = |est: &[f64]| {
        let s: f64 = est.iter().zip(&path.v).map(|(e, v)| (e - v).powi(2)).sum();
        (s / est.len() as f64).sqrt()
    };
    println!("gamma from trend rule: {gamma:.1}");
    println!("loglik at truth {:.2}", kf_predictive_loglik(&filt));
    println!("value rms error: filtered {:.4}, smoothed {:.4}", err(&filt.v_filt), err(&smooth.v_smooth));

    let start = ModelParams { kappa: 0.02, beta: 0.0, sigma_n: 0.1, sigma_v: 0.05, g: 0.0, v0: path.p[0], gamma, ..truth };
    let mut fit = em_fit(&path.p, &u, &start, 5000, DEFAULT_TOL)?;
    em_tstats(&mut fit, &path.p, &u);
    println!("EM: {} iterations, converged {}, loglik {:.2}", fit.iterations, fit.converged, fit.loglik);
    for name in ["kappa", "beta", "sigma_n", "sigma_v", "g"] {
        let t = fit.tstats.get(name).map_or("-".to_string(), |t| format!("{t:.1}"));
        println!("  {name:<8} true {:>9.5}  fit {:>9.5}  t {t}", truth.get(name).unwrap(), fit.params.get(name).unwrap());
    }
    Ok(())
}

//! Noise-free dynamics on both sides of the Hopf boundary.
//!
//! ```bash
//! cargo run --release --example bifurcation
//! ```

use chiarella::model::bifurcation_margin;
use chiarella::simulate::{detect_limit_cycle, integrate_deterministic, DEFAULT_DT, DEFAULT_TRANSIENT_FRACTION};
use chiarella::{MarketState, ModelParams};

fn main() -> chiarella::Result<()> {
    let base = ModelParams::fig2();
    for kappa in [0.08, 0.3, 0.6, 0.8] {
        let params = ModelParams { kappa, ..base };
        let start = MarketState::new(params.v0 + 0.1, 0.0, params.v0);
        let traj = integrate_deterministic(&params, start, DEFAULT_DT, 3000.0)?;
        let cycle = detect_limit_cycle(&traj, DEFAULT_TRANSIENT_FRACTION)?;
        match cycle.period {
            Some(period) if !cycle.converged_to_fixed_point => println!(
                "kappa {kappa:.2}  margin {:+.3}  limit cycle: period {period:.1} months, |p-v| up to {:.3}",
                bifurcation_margin(&params),
                cycle.amplitude_delta
            ),
            _ => println!("kappa {kappa:.2}  margin {:+.3}  fixed point", bifurcation_margin(&params)),
        }
    }
    Ok(())
}

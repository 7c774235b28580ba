//! Silverman multimodality tests on simulated mispricing.
//!
//! ```bash
//! cargo run --release --example bimodality
//! ```

use chiarella::analysis::{histogram, silverman_test, SilvermanConfig};
use chiarella::simulate::simulate_path;
use chiarella::ModelParams;

fn main() -> chiarella::Result<()> {
    let cfg = SilvermanConfig { bootstrap: 200, ..Default::default() };
    for (name, params) in [("linear", ModelParams::table3_us()), ("cubic", ModelParams::fig12())] {
        let path = simulate_path(&params, 50_000, 3)?;
        let delta = path.distortion();
        for k in [1, 2] {
            let r = silverman_test(&delta, k, &cfg)?;
            println!("{name:>6} k={k}: critical bandwidth {:.4}, p = {:.3}", r.critical_bandwidth, r.p_value);
        }
        let h = histogram(&delta, 15)?;
        let top = h.counts.iter().copied().max().unwrap_or(1).max(1);
        for (edge, n) in h.edges.windows(2).zip(&h.counts) {
            let c = 0.5 * (edge[0] + edge[1]);
            println!("  {c:+.2} {}", "#".repeat((n * 40 / top) as usize));
        }
    }
    Ok(())
}

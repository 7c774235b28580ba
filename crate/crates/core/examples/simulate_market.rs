//! Simulates the linear and the cubic market and prints distortion statistics.
//!
//! ```bash
//! cargo run --release --example simulate_market
//! ```

use chiarella::analysis::distortion_stats;
use chiarella::simulate::simulate_path;
use chiarella::ModelParams;

fn main() -> chiarella::Result<()> {
    for (name, params) in [("linear", ModelParams::table3_us()), ("cubic", ModelParams::fig12())] {
        let path = simulate_path(&params, 20_000, 1)?;
        let stats = distortion_stats(&path.p, &path.v, 40, None)?;
        println!("{name:>6}: mean {:+.3}  rms {:.3}  final price {:.2}", stats.mean, stats.rms, path.p.last().unwrap());
    }

    let path = simulate_path(&ModelParams::table3_us(), 12, 7)?;
    let mut out = Vec::new();
    path.write_csv(&mut out)?;
    print!("{}", String::from_utf8_lossy(&out));
    Ok(())
}

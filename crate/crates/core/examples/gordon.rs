//! Dividend-discount benchmark value for a growing dividend stream.
//!
//! ```bash
//! cargo run --release --example gordon
//! ```

use chiarella::analysis::gordon_value;

fn main() -> chiarella::Result<()> {
    let dividends: Vec<f64> = (0..30).map(|y| 1.0 * 1.03f64.powi(y)).collect();
    let values = gordon_value(&dividends, 0.068, 0.022, 1.0)?;
    for (year, (d, v)) in dividends.iter().zip(&values).enumerate().step_by(5) {
        println!("year {year:>2}: dividend {d:.3}  value {:.2}  price/dividend {:.1}", v.exp(), v.exp() / d);
    }
    let block = gordon_value(&[1.0], 0.068, 0.022, 1.0)?[0].exp();
    println!("terminal block per unit dividend: {block:.3}");
    Ok(())
}

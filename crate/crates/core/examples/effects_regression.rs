//! Regresses next-month returns on trend and value signals.
//!
//! ```bash
//! cargo run --release --example effects_regression
//! ```

use chiarella::analysis::{effects_dataset, regress_effects, Term};
use chiarella::simulate::simulate_path;
use chiarella::ModelParams;

fn main() -> chiarella::Result<()> {
    let params = ModelParams::table3_us();
    let path = simulate_path(&params, 20_000, 5)?;
    let data = effects_dataset(&path.p, &path.v, params.alpha)?;
    for terms in Term::table_rows() {
        let r = regress_effects(&data.returns, &data.m, &data.d, &terms)?;
        let cols: Vec<String> = terms
            .iter()
            .filter(|t| **t != Term::Const)
            .map(|t| format!("{}={:+.4} (t {:+.1})", t.name(), r.coef(*t).unwrap(), r.tstats[t.name()]))
            .collect();
        println!("adj R2 {:.4}  {}", r.adj_r2, cols.join("  "));
    }
    Ok(())
}

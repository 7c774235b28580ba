//! Writes a small synthetic dataset and runs fit, analyze and report on it,
//! as the `chiarella` binary would.
//!
//! ```bash
//! cargo run --release --example dataset_pipeline
//! ```

use std::fs;
use std::path::PathBuf;

use chiarella::cli::{run, AnalyzeArgs, Command, FitArgs, ModelArg, ReportArgs};
use chiarella::simulate::simulate_path;
use chiarella::ModelParams;

fn main() -> chiarella::Result<()> {
    let root: PathBuf = std::env::temp_dir().join("chiarella_pipeline");
    fs::create_dir_all(&root).map_err(|e| chiarella::Error::io(&root, e))?;

    let truth = ModelParams { kappa: 0.05, ..ModelParams::table3_us() };
    let mut manifest = String::from("alpha = 0.14285714285714285\n");
    for (i, class) in ["index", "index", "commodity", "commodity"].iter().enumerate() {
        let path = simulate_path(&truth, 600, 10 + i as u64)?;
        let mut csv = String::from("date,price\n");
        for (t, lp) in path.p.iter().enumerate() {
            csv.push_str(&format!("{:04}-{:02}-01,{}\n", 1950 + t / 12, t % 12 + 1, lp.exp()));
        }
        let file = root.join(format!("asset{i}.csv"));
        fs::write(&file, csv).map_err(|e| chiarella::Error::io(&file, e))?;
        manifest.push_str(&format!("[[assets]]\nname = \"asset{i}\"\nclass = \"{class}\"\npath = \"asset{i}.csv\"\n"));
    }
    let manifest_path = root.join("data.toml");
    fs::write(&manifest_path, manifest).map_err(|e| chiarella::Error::io(&manifest_path, e))?;

    let fit = root.join("fit");
    run(&Command::Fit(FitArgs {
        manifest: manifest_path.clone(),
        out: fit.clone(),
        model: ModelArg::Linear,
        class: None,
        seed: 0,
        max_iter: 500,
        tol: 1e-6,
        max_evals: 20_000,
        multistarts: 2,
        alternations: 1,
    }))?;
    run(&Command::Analyze(AnalyzeArgs {
        manifest: manifest_path,
        fit: fit.clone(),
        out: root.join("analysis"),
        seed: 0,
        bins: 40,
        bootstrap: 100,
        gordon: false,
        discount: 0.068,
        terminal_growth: 0.022,
        periods_per_year: 12.0,
    }))?;
    let report = root.join("report");
    run(&Command::Report(ReportArgs { fit, out: report.clone() }))?;

    let table = report.join("parameters.csv");
    print!("{}", fs::read_to_string(&table).map_err(|e| chiarella::Error::io(&table, e))?);
    println!("outputs in {}", root.display());
    Ok(())
}

//! Run the cached on-disk pipeline twice from a TOML config.

use std::path::{Path, PathBuf};

use infsig::pipeline::read_results_csv;
use infsig::{run_pipeline, ExperimentConfig, Result};

fn main() -> Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/minimal.toml"));
    let config = ExperimentConfig::load(&path)?;
    let out = std::env::temp_dir().join(format!("infsig-{}", config.name));
    for attempt in ["first", "second"] {
        let report = run_pipeline(&config, &out)?;
        println!("{attempt} run:");
        for s in &report.stages {
            println!("  {:<10} {:?}  {}", s.stage, s.status, s.dir.display());
        }
    }
    for row in read_results_csv(&out.join("results.csv"))?.iter().filter(|r| r.epoch_scope == infsig::Scope::Cumulative) {
        println!("{:<9} F1 {:.3}", row.signal.as_str(), row.f1);
    }
    Ok(())
}

//! Accuracy of the trained model on a merged far cluster sharing one label.

use std::path::Path;

use infsig::model::evaluate_accuracy;
use infsig::pipeline::run_experiment;
use infsig::{ExperimentConfig, Result};

fn main() -> Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/far_ca.toml");
    let base = ExperimentConfig::load(&path)?;
    for seed in 0..5 {
        let config = ExperimentConfig { seed, ..base.clone() };
        let e = run_experiment(&config)?;
        let glitched = e.errors.glitched_ids();
        let si = e.rows.iter().find(|r| r.epoch_scope == infsig::Scope::Cumulative).map_or(0.0, |r| r.f1);
        println!(
            "seed {seed}: {} far samples, accuracy on them {:.3}, overall {:.3}, SI F1 {si:.3}",
            glitched.len(),
            evaluate_accuracy(&e.trail, &e.train, Some(&glitched))?,
            evaluate_accuracy(&e.trail, &e.split.validation, None)?
        );
    }
    Ok(())
}

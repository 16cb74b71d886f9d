//! Rank a label-noise benchmark with all four signals and score them.

use infsig::eval::f1_at_known_ratio;
use infsig::pipeline::run_experiment;
use infsig::{ExperimentConfig, Result, Scope};

const CONFIG: &str = r#"
name = "signals"
per_epoch = false

[data]
source = "blobs"
n = 800
dims = 8
classes = 4
separation = 6.0

[model]
architecture = "mlp"
hidden_units = 32
learning_rate = 0.8
epochs = 10
batch_size = 64

[[glitches]]
type = "uniform_noise"
epsilon = 0.1
"#;

fn main() -> Result<()> {
    let mut config = ExperimentConfig::from_toml_str(CONFIG)?;
    for seed in 0..3 {
        config.seed = seed;
        let e = run_experiment(&config)?;
        print!("seed {seed}, {} glitched:", e.errors.glitched_count());
        for r in e.rankings.iter().filter(|r| r.scope == Scope::Cumulative) {
            print!("  {} {:.3}", r.signal, f1_at_known_ratio(r, &e.errors)?.f1);
        }
        println!();
    }
    Ok(())
}

//! Sweep glitch ratios and seeds on a worker pool, printing rows as they land.

use std::path::Path;

use infsig::eval::{ratio_sweep, worker_count};
use infsig::{ExperimentConfig, Result, Signal};

fn main() -> Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/uniform_sweep.toml");
    let config = ExperimentConfig::load(&path)?;
    let sweep = config.sweep.clone().expect("config has a [sweep] table");
    println!("{} runs on {} workers", sweep.ratios.len() * sweep.seeds.len(), worker_count());
    let table = ratio_sweep(&config, &sweep.ratios, &sweep.seeds, |rows| {
        if let Some(r) = rows.first() {
            println!("  done ratio {} seed {}", r.ratio, r.seed);
        }
        Ok(())
    })?;
    print!("{:<7}", "ratio");
    for s in Signal::ALL {
        print!("{:>10}", s.as_str());
    }
    println!();
    for &ratio in &sweep.ratios {
        print!("{ratio:<7}");
        for s in Signal::ALL {
            print!("{:>10.3}", table.mean_f1(s, ratio).unwrap_or(f64::NAN));
        }
        println!();
    }
    Ok(())
}

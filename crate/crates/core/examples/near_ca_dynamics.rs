//! Per-epoch self influence on a downsampled minority class, against the
//! cumulative score.

use infsig::eval::per_epoch_detection;
use infsig::model::evaluate_accuracy;
use infsig::pipeline::run_experiment;
use infsig::{ExperimentConfig, Result, Signal};

fn main() -> Result<()> {
    for seed in 0..5 {
        let config = ExperimentConfig::from_toml_str(&format!(
            "name = 'near-ca'\nseed = {seed}\nsignals = ['SI']\n\
             [data]\nsource = 'blobs'\nn = 600\ndims = 2\nclasses = 3\nseparation = 1.0\n\
             [model]\narchitecture = 'logistic'\nlearning_rate = 0.1\nepochs = 10\nbatch_size = 16\n\
             [[glitches]]\ntype = 'near_ca'\nepsilon = {}\nsource_class = 0\n",
            0.1 / 2.1
        ))?;
        let e = run_experiment(&config)?;
        let det = per_epoch_detection(&e.tensor, &e.errors, Signal::Si, e.train.labels(), e.split.validation.labels())?;
        let curve: Vec<String> = det.per_epoch.iter().map(|r| format!("{:.2}", r.f1)).collect();
        println!(
            "seed {seed}: per-epoch SI F1 [{}]  best {:.3} @ {}  cumulative {:.3}  minority accuracy {:.3}",
            curve.join(" "),
            det.max_epoch_f1(),
            det.best_epoch(),
            det.cumulative.f1,
            evaluate_accuracy(&e.trail, &e.train, Some(&e.errors.glitched_ids()))?
        );
    }
    Ok(())
}

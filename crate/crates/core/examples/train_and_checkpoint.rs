//! Train both architectures with per-epoch checkpoints and persist a trail.

use infsig::data::{make_blobs, stratified_split};
use infsig::model::evaluate_accuracy;
use infsig::{train, CheckpointTrail, ModelConfig, Result};

fn main() -> Result<()> {
    let data = make_blobs(400, 4, 3, 3.0, 5)?.standardized();
    let split = stratified_split(&data, 0.8, 5)?;

    for config in [
        ModelConfig::logistic(0.1, 8, 32, 0),
        ModelConfig::mlp(16, 0.1, 8, 32, 0),
    ] {
        let trail = train(&split.train, &config)?;
        let losses: Vec<String> = trail.epoch_losses.iter().map(|l| format!("{l:.3}")).collect();
        println!(
            "{:<8} {} checkpoints, losses [{}], validation accuracy {:.3}",
            config.architecture.as_str(),
            trail.epochs(),
            losses.join(" "),
            evaluate_accuracy(&trail, &split.validation, None)?
        );
    }

    let trail = train(&split.train, &ModelConfig::mlp(16, 0.1, 8, 32, 0))?;
    let dir = std::env::temp_dir().join("infsig-trail-example");
    std::fs::create_dir_all(&dir).map_err(|e| infsig::Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("trail.bin");
    trail.save(&path)?;
    let back = CheckpointTrail::load(&path)?;
    println!("reloaded {} checkpoints, identical: {}", back.epochs(), back.checkpoints == trail.checkpoints);
    Ok(())
}

//! Compute a TracIn tensor in both modes and inspect its pieces.

use infsig::data::{make_blobs, stratified_split};
use infsig::{tracin, train, InfluenceMode, ModelConfig, Result};

fn main() -> Result<()> {
    let data = make_blobs(200, 2, 2, 3.0, 3)?.standardized();
    let split = stratified_split(&data, 0.8, 3)?;
    let trail = train(&split.train, &ModelConfig::logistic(0.2, 5, 16, 0))?;

    for mode in [InfluenceMode::Paper, InfluenceMode::Checkpoint] {
        let tensor = tracin(&trail, &split.train, &split.validation, mode)?;
        let top = tensor
            .cumulative_self
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let per_epoch: Vec<String> = (0..tensor.epochs()).map(|t| format!("{:.4}", tensor.epoch_self(t)[top])).collect();
        println!(
            "{:<10} {} x {} x {}: largest self influence on id {} = {:.4}, per epoch [{}]",
            mode.as_str(),
            tensor.epochs(),
            tensor.n_train(),
            tensor.n_val(),
            tensor.train_ids[top],
            tensor.cumulative_self[top],
            per_epoch.join(" ")
        );
        let row = &tensor.cumulative[top * tensor.n_val()..(top + 1) * tensor.n_val()];
        let (pos, neg) = row.iter().fold((0, 0), |(p, n), v| if *v > 0.0 { (p + 1, n) } else { (p, n + 1) });
        println!("           its validation influence: {pos} positive, {neg} non-positive");
    }
    Ok(())
}

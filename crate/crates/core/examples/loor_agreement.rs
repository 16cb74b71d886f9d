//! Compare cumulative TracIn with exact leave-one-out retraining on small
//! convex instances.

use infsig::data::{make_blobs, stratified_split};
use infsig::eval::{influence_loor_correlation, loor_oracle};
use infsig::{tracin, train, InfluenceMode, ModelConfig, Result};

fn main() -> Result<()> {
    let mut rhos = Vec::new();
    for seed in 0..10 {
        let data = make_blobs(24, 2, 2, 2.0, seed)?.standardized();
        let split = stratified_split(&data, 2.0 / 3.0, seed)?;
        let config = ModelConfig::logistic(0.1, 30, 16, seed);
        let trail = train(&split.train, &config)?;
        let tensor = tracin(&trail, &split.train, &split.validation, InfluenceMode::Paper)?;
        let records = loor_oracle(&split.train, &split.validation, &config)?;
        let rho = influence_loor_correlation(&tensor, &records)?;
        println!("seed {seed}: {} pairs, Spearman {rho:.3}", records.len());
        rhos.push(rho);
    }
    rhos.sort_by(f64::total_cmp);
    println!("min {:.3}  median {:.3}  max {:.3}", rhos[0], (rhos[4] + rhos[5]) / 2.0, rhos[9]);
    Ok(())
}

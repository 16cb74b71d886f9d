//! A training sample whose positive and negative influences cancel: MI
//! ranks it last, AAI first.

use infsig::signals::{compute, Scope};
use infsig::{InfluenceMode, InfluenceTensor, Result, Signal};

fn main() -> Result<()> {
    // rows: training ids 0..4; columns: two validation samples; two epochs
    let epoch0 = [2.0, -1.0, 1.0, 0.5, 0.5, 0.5, 0.2, 0.1];
    let epoch1 = [2.0, -3.0, 0.5, 0.0, 0.25, 0.25, 0.1, 0.1];
    let tensor = InfluenceTensor::from_epochs(
        InfluenceMode::Paper,
        vec![0, 1, 2, 3],
        vec![10, 11],
        epoch0.iter().chain(&epoch1).copied().collect(),
        vec![1.0; 8],
    )?;
    let (tl, vl) = ([0, 0, 1, 1], [0, 1]);
    for signal in [Signal::Mi, Signal::Aai, Signal::GdClass] {
        let r = compute(signal, &tensor, &tl, &vl, Scope::Cumulative)?;
        println!("{:<9} scores {:?} order {:?}", signal.as_str(), r.scores, r.order);
    }
    Ok(())
}

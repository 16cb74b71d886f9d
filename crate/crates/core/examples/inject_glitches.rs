//! Inject each glitch type into a blob dataset and summarise the error tables.

use infsig::data::make_blobs;
use infsig::{Corruption, GlitchSpec, GlitchType, Result};

fn main() -> Result<()> {
    let train = make_blobs(300, 4, 3, 4.0, 1)?.standardized();
    let foreign = make_blobs(100, 4, 2, 4.0, 2)?.affine(0.2, 6.0)?;

    let mut specs = vec![
        GlitchSpec::new(GlitchType::UniformNoise, 0.1),
        GlitchSpec {
            source_class: Some(0),
            target_class: Some(2),
            ..GlitchSpec::new(GlitchType::ClassDependentNoise, 0.3)
        },
        GlitchSpec {
            source_class: Some(1),
            ..GlitchSpec::new(GlitchType::NearCa, 0.05)
        },
        GlitchSpec::new(GlitchType::FarCa, 0.05),
    ];
    for corruption in [Corruption::Brightness, Corruption::Stripe] {
        specs.push(GlitchSpec {
            corruption: Some(corruption),
            magnitude: Some(3.0),
            ..GlitchSpec::new(GlitchType::Outlier, 0.05)
        });
    }

    for spec in &specs {
        let (out, errors) = spec.apply(&train, Some(&foreign), 7)?;
        println!(
            "{:<22} n {:>3} -> {:>3}  glitched {:>3} ({:.3})  class sizes {:?}",
            spec.glitch_type.as_str(),
            train.len(),
            out.len(),
            errors.glitched_count(),
            errors.ratio(),
            out.class_sizes()
        );
    }

    // chaining two injectors keeps one ground-truth table
    let (once, first) = specs[0].apply(&train, None, 7)?;
    let (twice, second) = specs[4].apply(&once, None, 8)?;
    let merged = first.chain(&second);
    merged.validate(&twice)?;
    println!("uniform noise then brightness: {} glitched", merged.glitched_count());
    Ok(())
}

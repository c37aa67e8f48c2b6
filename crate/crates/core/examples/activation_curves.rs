//! Samples learned-looking activations over several ranges and writes CSV
//! and SVG files.
//!
//!     cargo run --example activation_curves -- /tmp/curves

use std::path::PathBuf;

use mixact::mixture::MixtureWeights;
use mixact::report::{export_curves, sample_curve, DEFAULT_RANGES};

fn main() -> mixact::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mixact-curves"));

    let layers = [
        MixtureWeights::new("act1", [0.48, 0.44, 0.07])?,
        MixtureWeights::new("act2", [0.03, 0.49, 0.48])?,
        MixtureWeights::new("act3", [0.28, 0.09, 0.63])?,
    ];
    let mut samples = Vec::new();
    for w in &layers {
        for &(lo, hi) in &DEFAULT_RANGES {
            let s = sample_curve(w, lo, hi, 401)?;
            let (min, max) = s
                .points
                .iter()
                .fold((f64::MAX, f64::MIN), |(a, b), &(_, y)| (a.min(y), b.max(y)));
            println!(
                "{} on [{lo}, {hi}]: A ranges over [{min:.3}, {max:.3}]",
                w.layer_name()
            );
            samples.push(s);
        }
    }
    let files = export_curves(&samples, &out)?;
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

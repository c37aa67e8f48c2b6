//! Fits a LeakyReLU (separate slopes left and right of zero) to several
//! mixtures near the origin.
//!
//!     cargo run --example leaky_relu_fit

use mixact::mixture::MixtureWeights;
use mixact::report::fit_leaky_relu;

fn main() -> mixact::Result<()> {
    let cases = [
        ("pure relu", [1.0, 0.0, 0.0]),
        ("pure tanh", [0.0, 1.0, 0.0]),
        ("pure sin", [0.0, 0.0, 1.0]),
        ("uniform", [1.0, 1.0, 1.0]),
        ("relu-heavy", [0.52, 0.15, 0.33]),
        ("sin-heavy", [0.07, 0.02, 0.92]),
    ];
    println!(
        "{:<12} {:>8} {:>8} {:>10}",
        "mixture", "h1", "h2", "residual"
    );
    for (name, w) in cases {
        let fit = fit_leaky_relu(&MixtureWeights::new(name, w)?, -1.0, 1.0, 201)?;
        println!(
            "{name:<12} {:>8.4} {:>8.4} {:>10.2e}",
            fit.h1, fit.h2, fit.residual
        );
    }
    Ok(())
}

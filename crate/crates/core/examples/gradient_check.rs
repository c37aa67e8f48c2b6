//! Checks the whole backward pass of the reduced model against central
//! differences, then shows the same check catching a corrupted rule.
//!
//!     cargo run --release --example gradient_check -- 3

use mixact::autodiff::Fault;
use mixact::cli::{GradcheckProblem, GRADCHECK_MAX_DRAWS, GRADCHECK_STEP};

fn main() -> mixact::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .map_or(0, |s| s.parse().expect("seed"));

    let mut rejected = 0;
    let problem = loop {
        let p = GradcheckProblem::draw(seed, rejected)?;
        if p.is_reliable(GRADCHECK_STEP)? || rejected + 1 == GRADCHECK_MAX_DRAWS {
            break p;
        }
        rejected += 1;
    };
    println!(
        "seed {seed}: {rejected} batch draws rejected (kinks or truncation inside the stencil)"
    );

    let clean = problem.check(GRADCHECK_STEP, None)?;
    println!(
        "clean:   {} elements, max relative error {:.2e}",
        clean.elements, clean.max_rel_error
    );
    let broken = problem.check(GRADCHECK_STEP, Some(Fault::SinBackwardScaled))?;
    println!(
        "faulty:  max relative error {:.2e} at {}[{}]",
        broken.max_rel_error,
        problem.model.params()[broken.worst.0].name,
        broken.worst.1
    );

    // The same problem at a random batch would straddle kinks.
    let dense = GradcheckProblem::draw(seed, GRADCHECK_MAX_DRAWS + 1)?;
    let naive = dense.check(GRADCHECK_STEP, None)?;
    println!(
        "unscreened draw: {} of {} elements cross a kink, max relative error {:.2e}",
        naive.kink_crossings, naive.elements, naive.max_rel_error
    );
    Ok(())
}

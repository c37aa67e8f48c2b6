use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// (parameter index, element index) of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub elements: usize,
    /// Elements whose `θ ± h` evaluations landed on a different side of a
    /// ReLU or max-pool kink than `θ`. Central differences across a kink do
    /// not estimate the gradient, so a nonzero count explains large errors.
    pub kink_crossings: usize,
}

/// Compares tape gradients of the scalar produced by `f` against central
/// differences `(f(θ+h) − f(θ−h)) / 2h` for every element of every tensor in
/// `params`.
///
/// The relative error per element is `|a − n| / max(|a|, |n|, 1e-8)`. All
/// parameters are treated as differentiable regardless of their
/// `requires_grad` flag. Errors only come from `f` itself.
pub fn gradcheck<F>(params: &[Tensor], h: f64, f: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(p.clone().with_grad(true)))
        .collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let base_pattern = tape.activation_pattern();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.len()])
        })
        .collect();
    drop(tape);

    let eval = |values: &[Tensor]| -> Result<(f64, bool)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((
            tape.value(out).item(),
            tape.activation_pattern() == base_pattern,
        ))
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        elements: 0,
        kink_crossings: 0,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (ei, &a) in grads.iter().enumerate() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let (plus, plus_same) = eval(&work)?;
            work[pi].data_mut()[ei] = orig - h;
            let (minus, minus_same) = eval(&work)?;
            if !(plus_same && minus_same) {
                report.kink_crossings += 1;
            }
            work[pi].data_mut()[ei] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let mut err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if err.is_nan() {
                err = f64::INFINITY;
            }
            report.elements += 1;
            if err > report.max_rel_error || report.elements == 1 {
                report.max_rel_error = err;
                report.worst = (pi, ei);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Whether central differences with step `h` are a trustworthy reference for
/// `f` at `params`. Uses forward evaluations only. For every element:
///
/// - the ReLU signs and max-pool choices at `θ ± h` and `θ ± h/2` equal those
///   at `θ` (no kink inside the stencil), and
/// - the truncation error of the step-`h` quotient, estimated as
///   `4/3 · |D(h) − D(h/2)|`, is at most `rel_tol · max(|D(h)|, 1e-8)`.
///
/// Stops at the first element that fails.
pub fn stencil_reliable<F>(params: &[Tensor], h: f64, rel_tol: f64, f: F) -> Result<bool>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let eval = |values: &[Tensor]| -> Result<(f64, Vec<usize>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape.value(out).item(), tape.activation_pattern()))
    };
    let (_, base) = eval(params)?;
    let mut work: Vec<Tensor> = params.to_vec();
    for pi in 0..work.len() {
        for ei in 0..work[pi].len() {
            let orig = work[pi].data()[ei];
            let mut at = [0.0; 4];
            for (slot, shift) in at.iter_mut().zip([h, -h, h / 2.0, -h / 2.0]) {
                work[pi].data_mut()[ei] = orig + shift;
                let (value, pattern) = eval(&work)?;
                if pattern != base {
                    return Ok(false);
                }
                *slot = value;
            }
            work[pi].data_mut()[ei] = orig;
            let full = (at[0] - at[1]) / (2.0 * h);
            let half = (at[2] - at[3]) / h;
            let truncation = (full - half).abs() * 4.0 / 3.0;
            if truncation.is_nan() || truncation > rel_tol * full.abs().max(1e-8) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

//! Evaluates a mixed activation and differentiates it with respect to its
//! raw weights.
//!
//!     cargo run --example mixture_activation -- 2 1 0.5

use mixact::autodiff::{Tape, Tensor};
use mixact::mixture::{mixture_forward, mixture_forward_on, Basis, MixtureWeights};

fn main() -> mixact::Result<()> {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("weights must be numbers"))
        .collect();
    let w = match args.as_slice() {
        [a, b, c] => [*a, *b, *c],
        [] => [1.0, 1.0, 1.0],
        _ => panic!("pass three weights or none"),
    };
    let weights = MixtureWeights::new("demo", w)?;
    let p = weights.normalize().p();
    println!("w = {w:?}");
    println!(
        "P = [{:.4}, {:.4}, {:.4}]  (relu, tanh, sin)",
        p[0], p[1], p[2]
    );

    let xs = Tensor::from_slice(&[-3.0, -1.0, -0.25, 0.0, 0.25, 1.0, 3.0]);
    let ys = mixture_forward(&xs, &weights);
    for (x, y) in xs.data().iter().zip(ys.data()) {
        println!("  A({x:>5.2}) = {y:>8.5}");
    }

    // d/dw of sum_x A(x) flows through P = w / sum(w).
    let mut tape = Tape::new();
    let x = tape.leaf(xs);
    let wv = tape.leaf(Tensor::from_slice(&w).with_grad(true));
    let y = mixture_forward_on(&mut tape, x, wv, Basis::DEFAULT_ORDER)?;
    let total = tape.sum(y);
    tape.backward(total)?;
    println!(
        "d(sum A)/dw = {:?}",
        tape.grad(wv).expect("w is differentiable")
    );
    Ok(())
}

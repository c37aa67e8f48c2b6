//! Dense `f64` tensors and a tape for reverse-mode differentiation.
//!
//! A [`Tape`] records each primitive as it executes. Values live on the tape
//! and are addressed through [`Var`] handles; [`Tape::backward`] replays the
//! recorded backward rules in reverse order and fills the `grad` slot of
//! every reachable tensor that requires a gradient.
//!
//! Broadcasting is limited to one-element operands in the binary primitives
//! and to per-channel bias in [`Tape::add_bias`] / [`Tape::conv2d`].

mod gradcheck;
pub(crate) mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, stencil_reliable, GradcheckReport};
pub use kernels::ConvGeom;
pub use tape::{Elementwise, Fault, Reduce, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn tensor_rejects_inconsistent_shape() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::full(&[2], f64::NAN).check_finite("x").is_err());
    }

    #[test]
    fn matmul_small_cases() {
        let mut tape = Tape::new();
        let eye = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let col = tape.leaf(t(&[2, 1], &[3.0, 4.0]));
        let y = tape.matmul(eye, col).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);

        let row = tape.leaf(t(&[1, 2], &[1.0, 2.0]));
        let y = tape.matmul(row, col).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1]);
        assert_eq!(tape.value(y).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn conv2d_small_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
        let k = tape.leaf(t(&[1, 1, 1, 1], &[2.0]));
        let b = tape.leaf(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 2.0));

        let x = tape.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let k = tape.leaf(Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = tape.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[10.0]);
    }

    #[test]
    fn conv2d_rejects_non_integer_output() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 4, 4]));
        let k = tape.leaf(Tensor::zeros(&[1, 1, 3, 3]));
        let b = tape.leaf(Tensor::zeros(&[1]));
        assert!(matches!(tape.conv2d(x, k, b, 2, 0), Err(Error::Config(_))));
        let k5 = tape.leaf(Tensor::zeros(&[1, 1, 5, 5]));
        assert!(matches!(tape.conv2d(x, k5, b, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_slice(&[-1.0, 0.0, 2.5]));
        let y = tape.elementwise(x, Elementwise::Relu).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.5]);

        let zero = tape.leaf(Tensor::from_slice(&[0.0]));
        let th = tape.tanh(zero);
        let sn = tape.sin(zero);
        assert_eq!(tape.value(th).data(), &[0.0]);
        assert_eq!(tape.value(sn).data(), &[0.0]);

        let one = tape.leaf(Tensor::from_slice(&[1.0]));
        let th = tape.tanh(one);
        let sn = tape.sin(one);
        assert!((tape.value(th).item() - 0.761_594_155_955_764_9).abs() < 1e-12);
        assert!((tape.value(sn).item() - 0.841_470_984_807_896_5).abs() < 1e-12);
    }

    #[test]
    fn binary_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2]));
        let b = tape.leaf(Tensor::zeros(&[3]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.elementwise(a, Elementwise::Mul(b)).is_err());
    }

    #[test]
    fn reductions() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_slice(&[1.0, 2.0, 3.0]));
        let s = tape.reduce(x, Reduce::Sum).unwrap();
        assert_eq!(tape.value(s).item(), 6.0);
        let m = tape.reduce(x, Reduce::Mean).unwrap();
        assert_eq!(tape.value(m).item(), 2.0);

        let img = tape.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.reduce(img, Reduce::MaxOverWindow2x2).unwrap();
        assert_eq!(tape.value(p).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(p).data(), &[4.0]);

        let odd = tape.leaf(Tensor::zeros(&[1, 1, 3, 2]));
        assert!(tape.max_pool2(odd).is_err());
    }

    #[test]
    fn max_pool_ties_route_to_first_element() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 2, 2], 5.0).with_grad(true));
        let p = tape.max_pool2(x).unwrap();
        let l = tape.sum(p);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_cross_entropy_cases() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(&[1, 2], &[0.0, 0.0]));
        let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);

        let z = tape.leaf(t(&[1, 2], &[1000.0, 0.0]));
        let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
        assert!(tape.value(l).item().abs() < 1e-9);

        assert!(matches!(
            tape.softmax_cross_entropy(z, &[2]),
            Err(Error::LabelOutOfRange {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(&[2, 2], &[0.0, 0.0, 0.0, 0.0]).with_grad(true));
        let l = tape.softmax_cross_entropy(z, &[0, 1]).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(z).unwrap(), &[-0.25, 0.25, 0.25, -0.25]);
    }

    #[test]
    fn backward_simple_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2, 3], 0.7).with_grad(true));
        let l = tape.sum(x);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_slice(&[3.0]).with_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]).with_grad(true));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn fan_out_sums_branch_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_slice(&[0.3, -1.2]).with_grad(true));
        let a = tape.sin(x);
        let b = tape.scale(x, 2.0);
        let s = tape.add(a, b).unwrap();
        let l = tape.sum(s);
        tape.backward(l).unwrap();
        let g = tape.grad(x).unwrap();
        assert!((g[0] - (0.3f64.cos() + 2.0)).abs() < 1e-15);
        assert!((g[1] - ((-1.2f64).cos() + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.leaf(Tensor::from_slice(&[1.0, 2.0]));
        let x = tape.leaf(Tensor::from_slice(&[1.0, 2.0]).with_grad(true));
        let p = tape.mul(c, x).unwrap();
        let l = tape.sum(p);
        tape.backward(l).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn gradcheck_square() {
        let report = gradcheck(&[Tensor::from_slice(&[2.0])], 1e-4, |tape, v| {
            let sq = tape.mul(v[0], v[0])?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn gradcheck_smooth_primitives() {
        let x = Tensor::from_slice(&[0.3, -0.8, 1.7, 2.2]);
        let y = Tensor::from_slice(&[1.1, 0.4, -0.6, 0.9]);
        let s = Tensor::scalar(1.3);
        let report = gradcheck(&[x, y, s], 1e-4, |tape, v| {
            let a = tape.tanh(v[0]);
            let b = tape.sin(v[1]);
            let c = tape.mul(a, b)?;
            let d = tape.div(c, v[2])?;
            let e = tape.scale(d, 0.5);
            let f = tape.add(e, v[2])?;
            let g = tape.div_scalar(f, 3.0);
            Ok(tape.mean(g))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn gradcheck_detects_corrupted_rule() {
        let report = gradcheck(&[Tensor::from_slice(&[0.4, 1.0])], 1e-4, |tape, v| {
            tape.inject_fault(Fault::SinBackwardScaled);
            let s = tape.sin(v[0]);
            Ok(tape.sum(s))
        })
        .unwrap();
        assert!(report.max_rel_error > 0.1, "{report:?}");
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::from_slice(&[0.1, 0.2, 0.3, 0.4]).with_grad(true));
            let w = tape.leaf(t(&[2, 2], &[0.5, -0.1, 0.3, 0.8]).with_grad(true));
            let xm = tape.reshape(x, &[2, 2]).unwrap();
            let y = tape.matmul(xm, w).unwrap();
            let th = tape.tanh(y);
            let l = tape.softmax_cross_entropy(th, &[1, 0]).unwrap();
            tape.backward(l).unwrap();
            (
                tape.grad(x).unwrap().to_vec(),
                tape.grad(w).unwrap().to_vec(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gradcheck_counts_kink_crossings() {
        let f = |tape: &mut Tape, v: &[Var]| {
            let r = tape.relu(v[0]);
            Ok(tape.sum(r))
        };
        let near = gradcheck(&[Tensor::from_slice(&[5e-4, 1.0, -1.0])], 1e-3, f).unwrap();
        assert_eq!(near.kink_crossings, 1);
        assert_eq!(near.worst, (0, 0));
        assert!(near.max_rel_error > 0.1);

        let clear = gradcheck(&[Tensor::from_slice(&[0.5, 1.0, -1.0])], 1e-3, f).unwrap();
        assert_eq!(clear.kink_crossings, 0);
        assert!(clear.max_rel_error < 1e-12);
    }

    #[test]
    fn pool_pattern_tracks_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 2, 2], &[0.0, 3.0, 1.0, 2.0]));
        tape.max_pool2(x).unwrap();
        let r = tape.relu(x);
        let _ = r;
        assert_eq!(tape.activation_pattern(), vec![1, 0, 1, 1, 1]);
    }

    #[test]
    fn stencil_reliability() {
        let relu_sum = |tape: &mut Tape, v: &[Var]| {
            let r = tape.relu(v[0]);
            Ok(tape.sum(r))
        };
        assert!(
            !stencil_reliable(&[Tensor::from_slice(&[5e-4, 1.0])], 1e-3, 1e-5, relu_sum).unwrap()
        );
        assert!(
            stencil_reliable(&[Tensor::from_slice(&[0.5, 1.0])], 1e-3, 1e-5, relu_sum).unwrap()
        );

        // sin(x) − cos(x0)·x has zero slope at x0 but nonzero third
        // derivative, so the quotient is dominated by truncation there.
        let x0 = 0.3f64;
        let flat = move |tape: &mut Tape, v: &[Var]| {
            let s = tape.sin(v[0]);
            let l = tape.scale(v[0], -x0.cos());
            let y = tape.add(s, l)?;
            Ok(tape.sum(y))
        };
        assert!(!stencil_reliable(&[Tensor::from_slice(&[x0])], 1e-3, 1e-5, flat).unwrap());
        assert!(stencil_reliable(&[Tensor::from_slice(&[x0 + 0.5])], 1e-3, 1e-5, flat).unwrap());
    }
}

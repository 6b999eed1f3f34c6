//! Dense tensors and reverse-mode differentiation.

mod tape;
mod tensor;

pub use tape::{sigmoid, softmax, BackwardFault, ElementwiseOp, Gradients, Tape, Var};
pub use tensor::{Shape, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let tape = Tape::new();
        let i2 = tape.leaf(Tensor::identity(2));
        let m = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).values(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let b = tape.leaf(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let ab = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(ab), Shape::Matrix(1, 1));
        assert_eq!(tape.value(ab).values(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(Shape::Matrix(2, 3)));
        let b = tape.leaf(Tensor::zeros(Shape::Matrix(2, 3)));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_gradient_matches_finite_difference() {
        // d sum(A B) / dA at A=[[1,1]], B=[[2],[5]]
        let loss = |a0: f64, a1: f64| {
            let tape = Tape::new();
            let a = tape.leaf(Tensor::from_rows(&[vec![a0, a1]]).unwrap());
            let b = tape.leaf(Tensor::from_rows(&[vec![2.0], vec![5.0]]).unwrap());
            let s = tape.sum(tape.matmul(a, b).unwrap());
            tape.scalar(s)
        };
        let fd0 = central_diff(|x| loss(x, 1.0), 1.0, 1e-6);
        let fd1 = central_diff(|x| loss(1.0, x), 1.0, 1e-6);

        let tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap());
        let b = tape.leaf(Tensor::from_rows(&[vec![2.0], vec![5.0]]).unwrap());
        let s = tape.sum(tape.matmul(a, b).unwrap());
        let g = tape.backward(s).unwrap().wrt(a);
        assert_abs_diff_eq!(g.values()[0], fd0, epsilon = 1e-8);
        assert_abs_diff_eq!(g.values()[1], fd1, epsilon = 1e-8);
        assert_eq!(g.values(), &[2.0, 5.0]);
    }

    #[test]
    fn pointwise_examples() {
        let tape = Tape::new();
        let z = tape.leaf(Tensor::scalar(0.0));
        assert_eq!(tape.scalar(tape.sigmoid(z)), 0.5);
        assert_eq!(tape.scalar(tape.tanh(z)), 0.0);
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = tape.leaf(Tensor::vector(vec![4.0, 5.0, 6.0]));
        let h = tape.elementwise(ElementwiseOp::Hadamard, &[a, b]).unwrap();
        assert_eq!(tape.value(h).values(), &[4.0, 10.0, 18.0]);
        let c = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.add(a, c).is_err());
        assert!(tape.elementwise(ElementwiseOp::Sub, &[a]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[7.5, 7.5, 7.5]).unwrap();
        for x in p {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert_eq!(p[0], 1.0);
        assert!(p[1] < 1e-300);
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        for (x, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert_abs_diff_eq!(*x, want, epsilon = 1e-15);
        }
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn concat_examples() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::vector(vec![3.0]));
        let e = tape.leaf(Tensor::vector(vec![]));
        let f = tape.leaf(Tensor::vector(vec![5.0]));
        assert_eq!(tape.value(tape.concat(a, b).unwrap()).values(), &[1.0, 2.0, 3.0]);
        assert_eq!(tape.value(tape.concat(e, f).unwrap()).values(), &[5.0]);

        let s = tape.sum(tape.concat(a, b).unwrap());
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(a).values(), &[1.0, 1.0]);
        assert_eq!(g.wrt(b).values(), &[1.0]);

        let m = tape.leaf(Tensor::zeros(Shape::Matrix(1, 1)));
        assert!(tape.concat(a, m).is_err());
    }

    #[test]
    fn backward_examples() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let loss = tape.hadamard(x, x).unwrap();
        assert_eq!(tape.backward(loss).unwrap().wrt(x).values(), &[6.0]);

        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let loss = tape.sigmoid(x);
        assert_eq!(tape.backward(loss).unwrap().wrt(x).values(), &[0.25]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn unreachable_leaves_get_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.leaf(Tensor::zeros(Shape::Matrix(2, 2)));
        let g = tape.backward(tape.sum(x)).unwrap();
        assert!(!g.is_reachable(unused));
        assert_eq!(g.wrt(unused), Tensor::zeros(Shape::Matrix(2, 2)));
    }

    #[test]
    fn gradients_accumulate_over_multiple_consumers() {
        // loss = sum(x) + sum(x ∘ x); d/dx = 1 + 2x
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.5, -1.0]));
        let sq = tape.hadamard(x, x).unwrap();
        let l = tape.add(tape.sum(x), tape.sum(sq)).unwrap();
        assert_eq!(tape.backward(l).unwrap().wrt(x).values(), &[2.0, -1.0]);
    }

    #[test]
    fn injected_tanh_fault_changes_gradient() {
        let tape = Tape::with_fault(BackwardFault::TanhDerivative);
        let x = tape.leaf(Tensor::scalar(0.7));
        let l = tape.tanh(x);
        let g = tape.backward(l).unwrap().wrt(x).values()[0];
        let y = 0.7f64.tanh();
        assert_abs_diff_eq!(g, 1.0 - y, epsilon = 1e-15);
    }
}

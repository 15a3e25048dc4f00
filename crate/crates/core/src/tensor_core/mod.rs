//! Dense tensors and a tape-based reverse-mode differentiation engine.

mod graph;
pub mod ops;
mod scalar;
mod tensor;

use thiserror::Error;

pub use graph::{finite_difference_grad, Gradients, Graph, Var};
pub use ops::{cross_entropy, gelu, layer_norm, matmul, softmax, transpose};
pub use scalar::Scalar;
pub use tensor::{BitPattern, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("label {label} at position {index} is not a valid class")]
    BadLabel { index: usize, label: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("{0}")]
    BadArgument(&'static str),
}

impl TensorError {
    pub(crate) fn shape_mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Self::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap().with_requires_grad(true)
    }

    fn assert_close(analytic: &Tensor<f64>, numeric: &Tensor<f64>) {
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
            assert!(err < 1e-5, "analytic {a} vs numeric {n}");
        }
    }

    /// Checks d(sum(w ∘ build(x)))/dx against finite differences, with a
    /// fixed random weighting so every output element matters.
    fn check_unary(shape: &[usize], build: impl Fn(&mut Graph<f64>, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, shape);
        let eval = |xt: &Tensor<f64>, rng_w: &mut ChaCha8Rng| {
            let mut g = Graph::new();
            let xv = g.param("x", xt.clone());
            let y = build(&mut g, xv);
            let w = random(rng_w, g.value(y).shape()).with_requires_grad(false);
            let wv = g.constant(w);
            let prod = g.mul(y, wv).unwrap();
            let loss = g.sum(prod);
            (g, loss)
        };
        let (g, loss) = eval(&x, &mut ChaCha8Rng::seed_from_u64(5));
        let analytic = g.backward(loss).unwrap().by_name()["x"].clone();
        let numeric = finite_difference_grad(
            |xt| {
                let (g, loss) = eval(xt, &mut ChaCha8Rng::seed_from_u64(5));
                g.value(loss).item().unwrap()
            },
            &x,
            1e-5,
        );
        assert_close(&analytic, &numeric);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::<f32>::new();
        let w = g.param("w", Tensor::zeros(vec![2, 3]).with_requires_grad(true));
        let s = g.sum(w);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.by_name()["w"], Tensor::ones(vec![2, 3]));
    }

    #[test]
    fn backward_of_square() {
        let mut g = Graph::<f64>::new();
        let w = g.param("w", Tensor::scalar(3.0).with_requires_grad(true));
        let sq = g.mul(w, w).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.by_name()["w"].item(), Some(6.0));
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param("a", Tensor::ones(vec![2]).with_requires_grad(true));
        g.param("b", Tensor::ones(vec![4]).with_requires_grad(true));
        let s = g.sum(a);
        let grads = g.backward(s).unwrap().by_name();
        assert_eq!(grads["b"], Tensor::zeros(vec![4]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let a = g.param("a", Tensor::ones(vec![2]).with_requires_grad(true));
        assert!(matches!(g.backward(a), Err(TensorError::NotScalarLoss(_))));
    }

    #[test]
    fn finite_difference_examples() {
        let x = Tensor::<f64>::from_f64(vec![2], &[1.0, 2.0]).unwrap();
        let g = finite_difference_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-3);
        assert!((g.data()[0] - 2.0).abs() < 1e-3 && (g.data()[1] - 4.0).abs() < 1e-3);
        let g = finite_difference_grad(|_| 7.0, &x, 1e-3);
        assert_eq!(g.data(), &[0.0, 0.0]);
        let g = finite_difference_grad(|t| 0.5 * t.sum(), &x, 0.25);
        assert_eq!(g.data(), &[0.5, 0.5]);
    }

    #[test]
    fn grad_matmul_both_sides() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random(&mut rng, &[4, 2]).with_requires_grad(false);
        check_unary(&[3, 4], |g, x| {
            let bv = g.constant(b.clone());
            g.matmul(x, bv).unwrap()
        });
        let a = random(&mut rng, &[3, 4]).with_requires_grad(false);
        check_unary(&[4, 2], |g, x| {
            let av = g.constant(a.clone());
            g.matmul(av, x).unwrap()
        });
    }

    #[test]
    fn grad_elementwise_and_shape_ops() {
        check_unary(&[3, 5], |g, x| g.gelu(x));
        check_unary(&[3, 5], |g, x| g.softmax(x));
        check_unary(&[3, 5], |g, x| g.mul(x, x).unwrap());
        check_unary(&[3, 5], |g, x| g.scale(x, -2.5));
        check_unary(&[3, 5], |g, x| g.transpose(x).unwrap());
        check_unary(&[4, 5], |g, x| g.slice(x, 1, 2, 1, 3).unwrap());
        check_unary(&[4, 3], |g, x| {
            let a = g.slice(x, 0, 4, 0, 1).unwrap();
            let b = g.slice(x, 0, 4, 1, 2).unwrap();
            let c = g.concat_cols(&[b, a]).unwrap();
            let r = g.concat_rows(&[c, c]).unwrap();
            g.add(r, r).unwrap()
        });
        check_unary(&[5, 3], |g, x| g.gather_rows(x, &[4, 0, 4, 2]).unwrap());
        check_unary(&[7], |g, x| g.gather(x, &[6, 1, 1, 0, 3, 6], vec![2, 3]).unwrap());
    }

    #[test]
    fn grad_layer_norm_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gamma = random(&mut rng, &[4]);
        let beta = random(&mut rng, &[4]);
        check_unary(&[3, 4], |g, x| {
            let gv = g.constant(gamma.clone());
            let bv = g.constant(beta.clone());
            g.layer_norm(x, gv, bv, 1e-5).unwrap()
        });
        let input = random(&mut rng, &[3, 4]).with_requires_grad(false);
        check_unary(&[4], |g, gam| {
            let xv = g.constant(input.clone());
            let bv = g.constant(beta.clone());
            g.layer_norm(xv, gam, bv, 1e-5).unwrap()
        });
        check_unary(&[4], |g, b| {
            let xv = g.constant(input.clone());
            g.add_row(xv, b).unwrap()
        });
    }

    #[test]
    fn grad_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random(&mut rng, &[4, 2]);
        let labels = [0, 1, 1, 0];
        let mut g = Graph::new();
        let xv = g.param("x", x.clone());
        let loss = g.cross_entropy(xv, &labels).unwrap();
        let analytic = g.backward(loss).unwrap().by_name()["x"].clone();
        let numeric = finite_difference_grad(|t| cross_entropy(t, &labels).unwrap(), &x, 1e-5);
        assert_close(&analytic, &numeric);
    }

    #[test]
    fn composite_mlp_matches_finite_differences_in_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w1: Tensor<f32> = random(&mut rng, &[3, 6]).cast();
        let w2: Tensor<f32> = random(&mut rng, &[6, 2]).cast();
        let input: Tensor<f32> = random(&mut rng, &[4, 3]).cast::<f32>().with_requires_grad(false);
        let labels = [1, 0, 0, 1];
        let loss_of = |w1: &Tensor<f32>, w2: &Tensor<f32>| {
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            let a = g.param("w1", w1.clone());
            let b = g.param("w2", w2.clone());
            let h = g.matmul(x, a).unwrap();
            let h = g.gelu(h);
            let o = g.matmul(h, b).unwrap();
            let l = g.cross_entropy(o, &labels).unwrap();
            (g, l)
        };
        let (g, l) = loss_of(&w1, &w2);
        let grads = g.backward(l).unwrap().by_name();
        let numeric = finite_difference_grad(
            |t| {
                let (g, l) = loss_of(t, &w2);
                g.value(l).item().unwrap()
            },
            &w1,
            1e-3,
        );
        for (a, n) in grads["w1"].data().iter().zip(numeric.data()) {
            let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
            assert!(err < 1e-3 || (a - n).abs() < 1e-4, "{a} vs {n}");
        }
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::ones(vec![2, 2]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(g.dropout(x, 0.0, &mut rng).unwrap(), x);
        let d = g.dropout(x, 0.5, &mut rng).unwrap();
        assert!(g.value(d).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            z in prop::collection::vec(-30.0f64..30.0, 1..8),
            c in -50.0f64..50.0,
        ) {
            let t = Tensor::new(vec![z.len()], z.clone()).unwrap();
            let s = softmax(&t);
            prop_assert!(s.data().iter().all(|&p| p >= 0.0));
            prop_assert!((s.sum() - 1.0).abs() < 1e-6);
            let shifted = softmax(&t.map(|v| v + c));
            for (a, b) in s.data().iter().zip(shifted.data()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn cross_entropy_non_negative(
            logits in prop::collection::vec(-20.0f64..20.0, 2..=2),
            label in 0usize..2,
        ) {
            let t = Tensor::new(vec![1, 2], logits).unwrap();
            prop_assert!(cross_entropy(&t, &[label]).unwrap() >= 0.0);
        }
    }

    #[test]
    fn identical_graphs_are_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let a: Tensor<f32> = random(&mut rng, &[5, 4]).cast();
            let b: Tensor<f32> = random(&mut rng, &[4, 3]).cast();
            let mut g = Graph::new();
            let (av, bv) = (g.param("a", a), g.param("b", b));
            let m = g.matmul(av, bv).unwrap();
            let s = g.softmax(m);
            let l = g.sum(s);
            let grads = g.backward(l).unwrap().by_name();
            (g.value(s).clone(), grads["a"].clone())
        };
        let (s1, g1) = run();
        let (s2, g2) = run();
        assert!(s1.bit_eq(&s2) && g1.bit_eq(&g2));
    }
}

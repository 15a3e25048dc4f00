//! Forward kernels on plain tensors. The graph records these and supplies
//! the matching backward rules.

use super::{Scalar, Tensor, TensorError};

/// Additive logit applied to masked attention positions.
pub const MASK_NEG: f64 = -1e9;

const GELU_COEF: f64 = 0.044715;

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(TensorError::shape_mismatch("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (m, n) = a.dims2("transpose")?;
    let d = a.data();
    let mut out = Vec::with_capacity(m * n);
    for j in 0..n {
        for i in 0..m {
            out.push(d[i * n + j]);
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Softmax along the last axis with max subtraction.
pub fn softmax<T: Scalar>(z: &Tensor<T>) -> Tensor<T> {
    let c = z.last_dim();
    let mut out = z.data().to_vec();
    if c > 0 {
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
    }
    Tensor::new(z.shape().to_vec(), out).expect("shape preserved")
}

/// Row-wise log-sum-exp over the last axis.
pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let total: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + total.ln()
}

/// Output of [`layer_norm_parts`]: normalized values and per-row 1/std.
pub(crate) struct LayerNormParts<T> {
    pub out: Tensor<T>,
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn layer_norm_parts<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<LayerNormParts<T>, TensorError> {
    let h = x.last_dim();
    if gamma.shape() != [h] || beta.shape() != [h] {
        return Err(TensorError::shape_mismatch("layer_norm", x.shape(), gamma.shape()));
    }
    if eps <= T::zero() {
        return Err(TensorError::BadArgument("layer_norm eps must be positive"));
    }
    let hn = T::lit(h as f64);
    let mut out = Vec::with_capacity(x.len());
    let mut normalized = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(x.len() / h.max(1));
    for row in x.data().chunks(h) {
        let mean = row.iter().copied().sum::<T>() / hn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / hn;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for (j, &v) in row.iter().enumerate() {
            let xh = (v - mean) * inv;
            normalized.push(xh);
            out.push(xh * gamma.data()[j] + beta.data()[j]);
        }
    }
    Ok(LayerNormParts {
        out: Tensor::new(x.shape().to_vec(), out)?,
        normalized,
        inv_std,
    })
}

/// `(x - mean) / sqrt(var + eps) * gamma + beta` per last-axis slice,
/// population variance.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>, TensorError> {
    layer_norm_parts(x, gamma, beta, eps).map(|p| p.out)
}

fn gelu_inner<T: Scalar>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    k * (x + T::lit(GELU_COEF) * x * x * x)
}

/// Tanh-approximated GELU of one value.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    T::lit(0.5) * x * (T::one() + gelu_inner(x).tanh())
}

pub(crate) fn gelu_derivative<T: Scalar>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let t = gelu_inner(x).tanh();
    let du = k * (T::one() + T::lit(3.0 * GELU_COEF) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

pub(crate) fn check_labels(labels: &[usize], classes: usize) -> Result<(), TensorError> {
    match labels.iter().position(|&l| l >= classes) {
        Some(i) => Err(TensorError::BadLabel {
            index: i,
            label: labels[i],
        }),
        None => Ok(()),
    }
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of
/// `logits`, computed through log-sum-exp.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T, TensorError> {
    let (b, c) = logits.dims2("cross_entropy")?;
    if b != labels.len() || b == 0 {
        return Err(TensorError::shape_mismatch(
            "cross_entropy",
            logits.shape(),
            &[labels.len()],
        ));
    }
    check_labels(labels, c)?;
    let total: T = logits
        .data()
        .chunks(c)
        .zip(labels)
        .map(|(row, &y)| log_sum_exp(row) - row[y])
        .sum();
    Ok(total / T::lit(b as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        assert_eq!(matmul(&a, &eye).unwrap(), a);
        let r = matmul(&t(&[1, 2], &[1., 2.]), &t(&[2, 1], &[3., 4.])).unwrap();
        assert_eq!(r.data(), &[11.0]);
        let bad = matmul(&t(&[2, 3], &[0.; 6]), &t(&[2, 3], &[0.; 6]));
        assert!(matches!(bad, Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&t(&[2], &[0., 0.])).data(), &[0.5, 0.5]);
        let s = softmax(&t(&[2], &[1., 2.]));
        assert!((s.data()[0] - 0.26894).abs() < 1e-4);
        assert!((s.data()[1] - 0.73106).abs() < 1e-4);
        let s = softmax(&Tensor::<f32>::from_f64(vec![2], &[1000., 0.]).unwrap());
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-6 && s.data()[1] < 1e-6);
    }

    #[test]
    fn layer_norm_examples() {
        let ones = t(&[3], &[1., 1., 1.]);
        let zeros = t(&[3], &[0., 0., 0.]);
        let out = layer_norm(&t(&[3], &[5., 5., 5.]), &ones, &zeros, 1e-5).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let out = layer_norm(&t(&[2], &[1., 3.]), &t(&[2], &[1., 1.]), &t(&[2], &[0., 0.]), 1e-12).unwrap();
        assert!((out.data()[0] + 1.0).abs() < 1e-9 && (out.data()[1] - 1.0).abs() < 1e-9);

        let beta = t(&[2], &[0.25, -4.0]);
        let out = layer_norm(&t(&[2, 2], &[1., 7., -3., 2.]), &t(&[2], &[0., 0.]), &beta, 1e-5).unwrap();
        assert_eq!(out.data(), &[0.25, -4.0, 0.25, -4.0]);
        assert!(layer_norm(&ones, &ones, &zeros, 0.0).is_err());
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        assert!((gelu_scalar(1.0f64) - 0.8412).abs() < 1e-3);
        assert!((gelu_scalar(20.0f64) - 20.0).abs() < 1e-9);
        assert!(gelu_scalar(-20.0f64).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((cross_entropy(&t(&[1, 2], &[0., 0.]), &[1]).unwrap() - ln2).abs() < 1e-12);
        assert!(cross_entropy(&t(&[1, 2], &[10., -10.]), &[0]).unwrap() < 1e-8);
        let l = cross_entropy(&t(&[1, 2], &[1., 2.]), &[0]).unwrap();
        assert!((l - 1.3133).abs() < 1e-4);
        assert!(matches!(
            cross_entropy(&t(&[1, 2], &[1., 2.]), &[2]),
            Err(TensorError::BadLabel { .. })
        ));
    }
}

use alloc::format;
use alloc::vec::Vec;

use super::{matmul, Tensor};
use crate::math;
use crate::{Error, Result};

/// `x · weights + bias` for `x: [batch, in]`, `weights: [in, out]`, `bias: [out]`.
pub fn affine_forward(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, input) = x.dims2()?;
    let (w_in, w_out) = weights.dims2()?;
    if input != w_in {
        return Err(Error::dim("affine_forward", format!("input width {w_in}"), input));
    }
    if bias.len() != w_out {
        return Err(Error::dim("affine_forward", format!("bias of length {w_out}"), bias.len()));
    }
    let mut y = matmul(x, false, weights, false)?;
    let b = bias.data();
    for r in 0..y.rows() {
        for (v, bv) in y.row_mut(r).iter_mut().zip(b) {
            *v += bv;
        }
    }
    Ok(y)
}

pub struct AffineGrads {
    pub dx: Tensor,
    pub dweights: Tensor,
    pub dbias: Tensor,
}

pub fn affine_backward(x: &Tensor, weights: &Tensor, dy: &Tensor) -> Result<AffineGrads> {
    let dx = matmul(dy, false, weights, true)?;
    let dweights = matmul(x, true, dy, false)?;
    let dbias = Tensor::vector(dy.sum_rows());
    Ok(AffineGrads { dx, dweights, dbias })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(math::sigmoid)
}

/// Backward of [`sigmoid`] given its output `y`.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    y.zip_map(dy, |y, g| g * y * (1.0 - y))
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(math::tanh)
}

/// Backward of [`tanh`] given its output `y`.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    y.zip_map(dy, |y, g| g * (1.0 - y * y))
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

/// Backward of [`leaky_relu`] given its input `x`.
pub fn leaky_relu_backward(x: &Tensor, dy: &Tensor, slope: f64) -> Result<Tensor> {
    x.zip_map(dy, |x, g| if x > 0.0 { g } else { slope * g })
}

/// Row-wise softmax over the last dimension, max-shifted.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    if out.cols() == 0 {
        return out;
    }
    for r in 0..out.len() / out.cols() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward of [`softmax`] given its output `y`.
pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if y.shape() != dy.shape() {
        return Err(Error::dim("softmax_backward", format!("{:?}", y.shape()), format!("{:?}", dy.shape())));
    }
    let mut dx = dy.clone();
    for r in 0..y.len() / y.cols().max(1) {
        let yr = y.row(r);
        let inner = math::dot(yr, dy.row(r));
        for (d, &p) in dx.row_mut(r).iter_mut().zip(yr) {
            *d = p * (*d - inner);
        }
    }
    Ok(dx)
}

/// Weight normalization: column `j` of the result is `g[j] * v[:, j] / ‖v[:, j]‖`.
pub fn weight_norm_apply(v: &Tensor, g: &Tensor) -> Result<Tensor> {
    let norms = column_norms(v)?;
    if g.len() != norms.len() {
        return Err(Error::dim("weight_norm_apply", format!("gain of length {}", norms.len()), g.len()));
    }
    let mut w = v.clone();
    let scale: Vec<f64> = norms.iter().zip(g.data()).map(|(n, g)| g / n).collect();
    for r in 0..w.rows() {
        for (x, s) in w.row_mut(r).iter_mut().zip(&scale) {
            *x *= s;
        }
    }
    Ok(w)
}

/// Gradients of a weight-normalized matrix with respect to its direction `v`
/// and gain `g`, given the gradient `dw` of the effective weights.
pub fn weight_norm_backward(v: &Tensor, g: &Tensor, dw: &Tensor) -> Result<(Tensor, Tensor)> {
    let norms = column_norms(v)?;
    let (rows, cols) = v.dims2()?;
    if dw.shape() != v.shape() {
        return Err(Error::dim("weight_norm_backward", format!("{:?}", v.shape()), format!("{:?}", dw.shape())));
    }
    // dg_j = <dw_j, v_j> / n_j ; dv_j = (g_j / n_j) (dw_j - dg_j v_j / n_j)
    let mut dg = alloc::vec![0.0; cols];
    for r in 0..rows {
        for (j, d) in dg.iter_mut().enumerate() {
            *d += dw.get(r, j) * v.get(r, j);
        }
    }
    for (d, n) in dg.iter_mut().zip(&norms) {
        *d /= n;
    }
    let mut dv = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        for j in 0..cols {
            let n = norms[j];
            dv.set(r, j, g.data()[j] / n * (dw.get(r, j) - dg[j] * v.get(r, j) / n));
        }
    }
    Ok((dv, Tensor::vector(dg)))
}

pub(crate) fn column_norms(v: &Tensor) -> Result<Vec<f64>> {
    let (rows, cols) = v.dims2()?;
    let mut sq = alloc::vec![0.0; cols];
    for r in 0..rows {
        for (s, x) in sq.iter_mut().zip(v.row(r)) {
            *s += x * x;
        }
    }
    let norms: Vec<f64> = sq.into_iter().map(math::sqrt).collect();
    if let Some(j) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::ZeroNorm(format!("weight_norm column {j}")));
    }
    Ok(norms)
}

/// Inverted dropout. In training mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; the returned mask holds
/// the per-element multiplier for the backward pass. Eval mode is the identity
/// and returns no mask.
pub fn dropout_apply<R: rand::Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, Option<Tensor>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut mask = Tensor::zeros(x.shape());
    for m in mask.data_mut() {
        if rng.random::<f64>() >= rate {
            *m = keep;
        }
    }
    let y = x.zip_map(&mask, |a, b| a * b)?;
    Ok((y, Some(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn t(rows: usize, cols: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, d.to_vec()).unwrap()
    }

    #[test]
    fn affine_examples() {
        let id = t(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let zero_b = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(affine_forward(&t(1, 2, &[1.0, 2.0]), &id, &zero_b).unwrap().data(), &[1.0, 2.0]);
        let w = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            affine_forward(&t(1, 2, &[0.0, 0.0]), &w, &Tensor::vector(vec![3.0, -1.0])).unwrap().data(),
            &[3.0, -1.0]
        );
        assert_eq!(affine_forward(&t(1, 2, &[1.0, 1.0]), &w, &zero_b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn affine_rejects_shape_mismatch() {
        let w = Tensor::zeros(&[3, 2]);
        assert!(matches!(
            affine_forward(&Tensor::zeros(&[1, 2]), &w, &Tensor::zeros(&[2])),
            Err(Error::Dimension { .. })
        ));
        assert!(affine_forward(&Tensor::zeros(&[1, 3]), &w, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn activation_examples() {
        assert_eq!(sigmoid(&Tensor::vector(vec![0.0])).data(), &[0.5]);
        assert_eq!(softmax(&t(1, 2, &[0.0, 0.0])).data(), &[0.5, 0.5]);
        let y = tanh(&Tensor::vector(vec![40.0]));
        assert!(y.data()[0] <= 1.0 && 1.0 - y.data()[0] < 1e-15);
    }

    #[test]
    fn weight_norm_examples() {
        let v = t(2, 1, &[0.6, 0.8]);
        let w = weight_norm_apply(&v, &Tensor::vector(vec![1.0])).unwrap();
        assert!((w.data()[0] - 0.6).abs() < 1e-15 && (w.data()[1] - 0.8).abs() < 1e-15);
        let scaled = weight_norm_apply(&v.map(|x| 10.0 * x), &Tensor::vector(vec![1.0])).unwrap();
        for (a, b) in w.data().iter().zip(scaled.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let doubled = weight_norm_apply(&v, &Tensor::vector(vec![2.0])).unwrap();
        assert!((math::norm(doubled.data()) - 2.0).abs() < 1e-15);
        assert!(matches!(
            weight_norm_apply(&t(2, 2, &[1.0, 0.0, 1.0, 0.0]), &Tensor::vector(vec![1.0, 1.0])),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn dropout_modes() {
        let mut rng = crate::rng_from_seed(7);
        let x = Tensor::matrix(10, 10, (0..100).map(|i| i as f64).collect()).unwrap();
        assert_eq!(dropout_apply(&x, 0.5, false, &mut rng).unwrap().0, x);
        assert_eq!(dropout_apply(&x, 0.0, true, &mut rng).unwrap().0, x);
        assert!(dropout_apply(&x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_zero_fraction_within_three_sigma() {
        let n = 100_000;
        let mut rng = crate::rng_from_seed(11);
        let x = Tensor::filled(&[n], 1.0);
        let (y, _) = dropout_apply(&x, 0.5, true, &mut rng).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((zeros - 0.5 * n as f64).abs() < 3.0 * sigma, "zeros = {zeros}");
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = crate::rng_from_seed(3);
        let x = Tensor::vector((0..10).map(|i| 0.5 + i as f64).collect());
        let trials = 100_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            acc += dropout_apply(&x, 0.3, true, &mut rng).unwrap().0.sum();
        }
        let mean_out = acc / (trials as f64 * 10.0);
        let mean_in = x.sum() / 10.0;
        assert!((mean_out - mean_in).abs() < 0.01 * mean_in, "{mean_out} vs {mean_in}");
    }

    /// Scalar probe: sum of `c ⊙ f(θ)` with fixed random `c`, so every output
    /// coordinate contributes to the checked gradient.
    fn probe(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng_from_seed(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn affine_sigmoid_composite_passes_grad_check() {
        let mut rng = crate::rng_from_seed(5);
        let x = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let c = probe(3 * 2, 9);
        let theta: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |th: &[f64]| -> Result<(f64, Vec<f64>)> {
            let w = Tensor::matrix(4, 2, th[..8].to_vec())?;
            let b = Tensor::vector(th[8..].to_vec());
            let z = affine_forward(&x, &w, &b)?;
            let y = sigmoid(&z);
            let loss = math::dot(y.data(), &c);
            let dy = Tensor::matrix(3, 2, c.clone())?;
            let dz = sigmoid_backward(&y, &dy)?;
            let g = affine_backward(&x, &w, &dz)?;
            let mut grad = g.dweights.into_data();
            grad.extend(g.dbias.into_data());
            Ok((loss, grad))
        };
        let report = grad_check(f, &theta, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn softmax_tanh_and_weight_norm_pass_grad_check() {
        let mut rng = crate::rng_from_seed(6);
        let c = probe(6, 10);
        let theta: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = |th: &[f64]| -> Result<(f64, Vec<f64>)> {
            // v: 3x2, g: 2, then rows of tanh(W) pushed through a softmax.
            let v = Tensor::matrix(3, 2, th[..6].to_vec())?;
            let g = Tensor::vector(th[6..8].to_vec());
            let s = th[8];
            let w = weight_norm_apply(&v, &g)?;
            let h = tanh(&w.map(|x| s * x));
            let p = softmax(&h);
            let loss = math::dot(p.data(), &c);
            let dp = Tensor::matrix(3, 2, c.clone())?;
            let dh = softmax_backward(&p, &dp)?;
            let dpre = tanh_backward(&h, &dh)?;
            let ds = math::dot(dpre.data(), w.data());
            let dw = dpre.map(|x| x * s);
            let (dv, dg) = weight_norm_backward(&v, &g, &dw)?;
            let mut grad = dv.into_data();
            grad.extend(dg.into_data());
            grad.push(ds);
            Ok((loss, grad))
        };
        let report = grad_check(f, &theta, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(row in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let n = row.len();
            let p = softmax(&Tensor::matrix(1, n, row).unwrap());
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn weight_norm_is_scale_invariant(
            v in proptest::collection::vec(0.1f64..3.0, 6),
            g in proptest::collection::vec(-2.0f64..2.0, 2),
            c in 1e-3f64..1e3,
        ) {
            let v = Tensor::matrix(3, 2, v).unwrap();
            let g = Tensor::vector(g);
            let a = weight_norm_apply(&v, &g).unwrap();
            let b = weight_norm_apply(&v.map(|x| c * x), &g).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

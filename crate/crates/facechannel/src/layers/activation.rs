use crate::error::Result;
use crate::tensor::{elem, Element, Tensor};

/// y = max(x, 0). The cache is the input itself.
pub fn relu_forward<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| if v > E::zero() { v } else { E::zero() })
}

/// dx = dy where x > 0 else 0. The subgradient at exactly 0 is 0.
pub fn relu_backward<E: Element>(dy: &Tensor<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
    dy.zip_map(x, |g, v| if v > E::zero() { g } else { E::zero() })
}

pub fn tanh_forward<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| v.tanh())
}

/// Backward through tanh given the forward *output* y: dx = dy * (1 - y^2).
pub fn tanh_backward<E: Element>(dy: &Tensor<E>, y: &Tensor<E>) -> Result<Tensor<E>> {
    dy.zip_map(y, |g, v| g * (E::one() - v * v))
}

/// Row-wise softmax of an [N,K] tensor, with max-subtraction so large
/// logits do not overflow. Each output row sums to 1.
pub fn softmax<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = x.shape().to_vec();
    if shape.len() != 2 {
        return Err(crate::error::Error::Shape(format!(
            "softmax expects [N,K], got {shape:?}"
        )));
    }
    let (n, k) = (shape[0], shape[1]);
    let mut out = vec![E::zero(); n * k];
    for i in 0..n {
        let row = &x.data()[i * k..(i + 1) * k];
        let mx = row.iter().cloned().fold(E::neg_infinity(), E::max);
        let mut sum = E::zero();
        for (o, &v) in out[i * k..(i + 1) * k].iter_mut().zip(row) {
            *o = (v - mx).exp();
            sum += *o;
        }
        for o in &mut out[i * k..(i + 1) * k] {
            *o = *o / sum;
        }
    }
    Tensor::new(shape, out)
}

/// softplus(x) = ln(1 + e^x), evaluated stably.
pub fn softplus<E: Element>(x: E) -> E {
    let xf = x.to_f64();
    if xf > 30.0 {
        x
    } else if xf < -30.0 {
        elem(xf.exp())
    } else {
        elem(xf.exp().ln_1p())
    }
}

/// d/dx softplus(x) = sigmoid(x).
pub fn sigmoid<E: Element>(x: E) -> E {
    let xf = x.to_f64();
    elem(1.0 / (1.0 + (-xf).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_basics() {
        let x = Tensor::new(vec![3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let dy = Tensor::new(vec![3], vec![1.0f32, 1.0, 1.0]).unwrap();
        assert_eq!(relu_backward(&dy, &x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_symmetry() {
        let x = Tensor::new(vec![1, 3], vec![0.0f32, 0.0, 0.0]).unwrap();
        let y = softmax(&x).unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_large_logits_stable() {
        let x = Tensor::new(vec![1, 3], vec![1000.0f32, 0.0, 0.0]).unwrap();
        let y = softmax(&x).unwrap();
        assert!(y.all_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-6);
        assert!(y.data()[1] < 1e-6 && y.data()[2] < 1e-6);
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut rng = crate::rng::SeededRng::new(2);
        let x = Tensor::<f32>::from_fn(&[4, 7], |_| rng.uniform(-5.0, 5.0) as f32).unwrap();
        let y = softmax(&x).unwrap();
        for i in 0..4 {
            let s: f32 = y.data()[i * 7..(i + 1) * 7].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(y.data()[i * 7..(i + 1) * 7]
                .iter()
                .all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &x in &[-5.0f64, -0.3, 0.0, 0.7, 8.0] {
            let naive = (1.0 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
        assert!(softplus(1000.0f64).is_finite());
        assert!(softplus(-1000.0f64) >= 0.0);
    }
}

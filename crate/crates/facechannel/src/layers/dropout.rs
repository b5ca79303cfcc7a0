//! Inverted dropout: surviving elements are scaled by 1/(1-rate) at train
//! time so inference passes the input through unchanged.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{elem, Element, Tensor};

use super::Mode;

#[derive(Debug, Clone)]
pub struct DropoutCache<E: Element> {
    /// Entries are 0 or 1/(1-rate); empty in infer mode.
    pub mask: Option<Tensor<E>>,
}

pub fn dropout_forward<E: Element>(
    x: &Tensor<E>,
    rate: f64,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<(Tensor<E>, DropoutCache<E>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Param(format!("dropout rate {rate} not in [0,1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), DropoutCache { mask: None }));
    }
    let keep_scale = elem::<E>(1.0 / (1.0 - rate));
    let mask = Tensor::from_fn(x.shape(), |_| {
        if rng.next_f64() < rate {
            E::zero()
        } else {
            keep_scale
        }
    })?;
    let y = x.zip_map(&mask, |v, m| v * m)?;
    Ok((y, DropoutCache { mask: Some(mask) }))
}

pub fn dropout_backward<E: Element>(dy: &Tensor<E>, cache: &DropoutCache<E>) -> Result<Tensor<E>> {
    match &cache.mask {
        None => Ok(dy.clone()),
        Some(mask) => dy.zip_map(mask, |g, m| g * m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infer_is_bitwise_identity() {
        let mut rng = SeededRng::new(41);
        let x = Tensor::<f32>::from_fn(&[100], |_| rng.uniform(-1.0, 1.0) as f32).unwrap();
        let (y, _) = dropout_forward(&x, 0.5, Mode::Infer, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_rate_is_identity() {
        let mut rng = SeededRng::new(42);
        let x = Tensor::<f32>::from_fn(&[100], |_| rng.uniform(-1.0, 1.0) as f32).unwrap();
        let (y, _) = dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn rejects_rate_one() {
        let mut rng = SeededRng::new(43);
        let x = Tensor::<f32>::zeros(&[4]).unwrap();
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn half_rate_statistics() {
        let mut rng = SeededRng::new(44);
        let n = 100_000;
        let x = Tensor::<f32>::full(&[n], 1.0).unwrap();
        let (y, _) = dropout_forward(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let zeroed = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeroed - 0.5).abs() < 0.02, "zeroed fraction {zeroed}");
        let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn backward_applies_same_mask() {
        let mut rng = SeededRng::new(45);
        let x = Tensor::<f32>::full(&[1000], 1.0).unwrap();
        let (_, cache) = dropout_forward(&x, 0.3, Mode::Train, &mut rng).unwrap();
        let dy = Tensor::<f32>::full(&[1000], 1.0).unwrap();
        let dx = dropout_backward(&dy, &cache).unwrap();
        assert_eq!(dx.data(), cache.mask.as_ref().unwrap().data());
    }
}

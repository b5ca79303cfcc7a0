use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{matmul, transpose2, Element, Tensor};

use super::conv::fan_in_uniform;

/// Fully connected layer: y = xW + b with x [N,D], W [D,U], b [U].
#[derive(Debug, Clone)]
pub struct DenseLayer<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct DenseCache<E: Element> {
    pub input: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<E: Element> {
    pub d_weight: Tensor<E>,
    pub d_bias: Tensor<E>,
}

impl<E: Element> DenseLayer<E> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        DenseLayer {
            weight: fan_in_uniform(&[in_dim, out_dim], in_dim, rng),
            bias: Tensor::zeros(&[out_dim]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<(Tensor<E>, DenseCache<E>)> {
        if x.rank() != 2 || x.shape()[1] != self.weight.shape()[0] {
            return Err(Error::Shape(format!(
                "dense: input {:?} vs weight {:?}",
                x.shape(),
                self.weight.shape()
            )));
        }
        let mut y = matmul(x, &self.weight)?;
        let u = self.bias.len();
        for row in y.data_mut().chunks_mut(u) {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok((y, DenseCache { input: x.clone() }))
    }

    pub fn backward(
        &self,
        dy: &Tensor<E>,
        cache: &DenseCache<E>,
    ) -> Result<(Tensor<E>, DenseGrads<E>)> {
        let dx = matmul(dy, &transpose2(&self.weight)?)?;
        let dw = matmul(&transpose2(&cache.input)?, dy)?;
        let u = self.bias.len();
        let mut db = Tensor::zeros(&[u])?;
        for row in dy.data().chunks(u) {
            for (d, &g) in db.data_mut().iter_mut().zip(row) {
                *d += g;
            }
        }
        Ok((
            dx,
            DenseGrads {
                d_weight: dw,
                d_bias: db,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_through() {
        let mut layer = DenseLayer::<f32>::new(3, 3, &mut SeededRng::new(1));
        layer.weight = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }).unwrap();
        layer.bias = Tensor::zeros(&[3]).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn bias_gradient_is_column_sum() {
        let layer = DenseLayer::<f32>::new(2, 3, &mut SeededRng::new(2));
        let x = Tensor::<f32>::zeros(&[4, 2]).unwrap();
        let (_, cache) = layer.forward(&x).unwrap();
        let dy = Tensor::<f32>::full(&[4, 3], 1.0).unwrap();
        let (_, grads) = layer.backward(&dy, &cache).unwrap();
        assert_eq!(grads.d_bias.data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let layer = DenseLayer::<f32>::new(3, 2, &mut SeededRng::new(3));
        let x = Tensor::<f32>::zeros(&[1, 4]).unwrap();
        assert!(layer.forward(&x).is_err());
    }
}

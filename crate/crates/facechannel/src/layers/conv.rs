use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{conv2d, conv2d_backward, elem, Element, Padding, Tensor};

/// Plain 3x3 `same` convolution layer (no activation; ReLU and batch norm
/// are separate layers in the stack).
#[derive(Debug, Clone)]
pub struct Conv2dLayer<E: Element> {
    pub kernel: Tensor<E>,
    pub bias: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct ConvCache<E: Element> {
    pub input: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<E: Element> {
    pub d_kernel: Tensor<E>,
    pub d_bias: Tensor<E>,
}

/// Centered uniform fan-in scaled initialization: U(-sqrt(6/fan_in), +).
pub fn fan_in_uniform<E: Element>(shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> Tensor<E> {
    let limit = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| elem(rng.uniform(-limit, limit)))
        .expect("init shape is valid")
}

impl<E: Element> Conv2dLayer<E> {
    pub fn new(in_channels: usize, out_channels: usize, ksize: usize, rng: &mut SeededRng) -> Self {
        let fan_in = in_channels * ksize * ksize;
        Conv2dLayer {
            kernel: fan_in_uniform(&[out_channels, in_channels, ksize, ksize], fan_in, rng),
            bias: Tensor::zeros(&[out_channels]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<(Tensor<E>, ConvCache<E>)> {
        let y = conv2d(x, &self.kernel, &self.bias, Padding::Same, 1)?;
        Ok((y, ConvCache { input: x.clone() }))
    }

    pub fn backward(
        &self,
        dy: &Tensor<E>,
        cache: &ConvCache<E>,
    ) -> Result<(Tensor<E>, ConvGrads<E>)> {
        let (dx, dk, db) = conv2d_backward(&cache.input, &self.kernel, dy, Padding::Same, 1)?;
        Ok((
            dx,
            ConvGrads {
                d_kernel: dk,
                d_bias: db,
            },
        ))
    }
}

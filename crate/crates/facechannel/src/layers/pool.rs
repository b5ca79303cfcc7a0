use crate::error::Result;
use crate::tensor::{maxpool2, maxpool2_backward, Element, Tensor};

#[derive(Debug, Clone)]
pub struct PoolCache {
    pub mask: Vec<usize>,
    pub input_shape: Vec<usize>,
}

pub fn maxpool_forward<E: Element>(x: &Tensor<E>) -> Result<(Tensor<E>, PoolCache)> {
    let (y, mask) = maxpool2(x)?;
    Ok((
        y,
        PoolCache {
            mask,
            input_shape: x.shape().to_vec(),
        },
    ))
}

pub fn maxpool_backward<E: Element>(dy: &Tensor<E>, cache: &PoolCache) -> Result<Tensor<E>> {
    maxpool2_backward(dy, &cache.mask, &cache.input_shape)
}

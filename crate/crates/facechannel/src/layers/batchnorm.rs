//! Batch normalization over the channel axis of [N,C,H,W] tensors.
//!
//! Train mode normalizes with per-channel batch statistics (population
//! variance over the N*H*W slots) and updates the running statistics with
//! momentum 0.99: running = 0.99*running + 0.01*batch. Infer mode
//! normalizes with the running statistics. epsilon = 1e-5.

use crate::error::{Error, Result};
use crate::tensor::{elem, Element, Tensor};

use super::Mode;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone)]
pub struct BatchNorm2d<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
    pub momentum: E,
    pub epsilon: E,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<E: Element> {
    pub normalized: Tensor<E>,
    /// 1/sqrt(var + eps) per channel, for whichever statistics were used.
    pub inv_std: Tensor<E>,
    pub mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<E: Element> {
    pub d_gamma: Tensor<E>,
    pub d_beta: Tensor<E>,
}

impl<E: Element> BatchNorm2d<E> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::full(&[channels], E::one()).unwrap(),
            beta: Tensor::zeros(&[channels]).unwrap(),
            running_mean: Tensor::zeros(&[channels]).unwrap(),
            running_var: Tensor::full(&[channels], E::one()).unwrap(),
            momentum: elem(DEFAULT_MOMENTUM),
            epsilon: elem(DEFAULT_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor<E>, mode: Mode) -> Result<(Tensor<E>, BatchNormCache<E>)> {
        if x.rank() != 4 || x.shape()[1] != self.channels() {
            return Err(Error::Shape(format!(
                "batchnorm: input {:?} vs {} channels",
                x.shape(),
                self.channels()
            )));
        }
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let slots = n * h * w;
        if mode == Mode::Train && slots < 2 {
            return Err(Error::Data(
                "batchnorm train mode needs at least 2 elements per channel".into(),
            ));
        }

        let (mean, var) = match mode {
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone()),
            Mode::Train => {
                let mut mean = Tensor::<E>::zeros(&[c])?;
                let mut var = Tensor::<E>::zeros(&[c])?;
                let denom = elem::<E>(slots as f64);
                for ch in 0..c {
                    let mut s = E::zero();
                    for b in 0..n {
                        let base = (b * c + ch) * h * w;
                        for &v in &x.data()[base..base + h * w] {
                            s += v;
                        }
                    }
                    let m = s / denom;
                    let mut sq = E::zero();
                    for b in 0..n {
                        let base = (b * c + ch) * h * w;
                        for &v in &x.data()[base..base + h * w] {
                            let d = v - m;
                            sq += d * d;
                        }
                    }
                    mean.data_mut()[ch] = m;
                    var.data_mut()[ch] = sq / denom;
                }
                let one_minus = E::one() - self.momentum;
                for ch in 0..c {
                    self.running_mean.data_mut()[ch] =
                        self.momentum * self.running_mean.data()[ch] + one_minus * mean.data()[ch];
                    self.running_var.data_mut()[ch] =
                        self.momentum * self.running_var.data()[ch] + one_minus * var.data()[ch];
                }
                (mean, var)
            }
        };

        let inv_std = var.map(|v| E::one() / (v + self.epsilon).sqrt());
        let mut normalized = Tensor::zeros_like(x);
        let mut out = Tensor::zeros_like(x);
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                let (m, is) = (mean.data()[ch], inv_std.data()[ch]);
                let (g, bt) = (self.gamma.data()[ch], self.beta.data()[ch]);
                for idx in base..base + h * w {
                    let xh = (x.data()[idx] - m) * is;
                    normalized.data_mut()[idx] = xh;
                    out.data_mut()[idx] = g * xh + bt;
                }
            }
        }
        Ok((
            out,
            BatchNormCache {
                normalized,
                inv_std,
                mode,
            },
        ))
    }

    pub fn backward(
        &self,
        dy: &Tensor<E>,
        cache: &BatchNormCache<E>,
    ) -> Result<(Tensor<E>, BatchNormGrads<E>)> {
        let (n, c, h, w) = (
            dy.shape()[0],
            dy.shape()[1],
            dy.shape()[2],
            dy.shape()[3],
        );
        let slots = n * h * w;
        let mut d_gamma = Tensor::<E>::zeros(&[c])?;
        let mut d_beta = Tensor::<E>::zeros(&[c])?;
        let mut dx = Tensor::zeros_like(dy);
        let xh = &cache.normalized;

        for ch in 0..c {
            let mut sum_dy = E::zero();
            let mut sum_dy_xh = E::zero();
            for b in 0..n {
                let base = (b * c + ch) * h * w;
                for idx in base..base + h * w {
                    sum_dy += dy.data()[idx];
                    sum_dy_xh += dy.data()[idx] * xh.data()[idx];
                }
            }
            d_beta.data_mut()[ch] = sum_dy;
            d_gamma.data_mut()[ch] = sum_dy_xh;

            let g = self.gamma.data()[ch];
            let is = cache.inv_std.data()[ch];
            match cache.mode {
                Mode::Infer => {
                    // Running statistics are constants w.r.t. the input.
                    for b in 0..n {
                        let base = (b * c + ch) * h * w;
                        for idx in base..base + h * w {
                            dx.data_mut()[idx] = dy.data()[idx] * g * is;
                        }
                    }
                }
                Mode::Train => {
                    let m = elem::<E>(slots as f64);
                    for b in 0..n {
                        let base = (b * c + ch) * h * w;
                        for idx in base..base + h * w {
                            let t = m * dy.data()[idx] - sum_dy - xh.data()[idx] * sum_dy_xh;
                            dx.data_mut()[idx] = g * is / m * t;
                        }
                    }
                }
            }
        }
        Ok((dx, BatchNormGrads { d_gamma, d_beta }))
    }
}

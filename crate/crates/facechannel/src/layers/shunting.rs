//! Shunting-inhibition layer.
//!
//! Two `same` convolutions over the same input produce an excitatory map
//! u = ReLU(conv_main(x)) and an inhibitory map I = ReLU(conv_inh(x)); the
//! output is S = u / (a + I), where the decay a is one learned scalar per
//! output channel, kept strictly positive via a = softplus(decay_raw) + 0.01.
//! No further activation is applied after the division.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{conv2d, conv2d_backward, elem, Element, Padding, Tensor};

use super::activation::{sigmoid, softplus};
use super::conv::fan_in_uniform;

pub const DECAY_FLOOR: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct ShuntingLayer<E: Element> {
    pub main_kernel: Tensor<E>,
    pub main_bias: Tensor<E>,
    pub inhibitory_kernel: Tensor<E>,
    pub inhibitory_bias: Tensor<E>,
    /// Pre-positivity decay parameter, one per output channel.
    pub decay_raw: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct ShuntingCache<E: Element> {
    pub input: Tensor<E>,
    pub pre_main: Tensor<E>,
    pub pre_inh: Tensor<E>,
    pub excitatory: Tensor<E>,
    pub inhibitory: Tensor<E>,
    pub decay: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct ShuntingGrads<E: Element> {
    pub d_main_kernel: Tensor<E>,
    pub d_main_bias: Tensor<E>,
    pub d_inhibitory_kernel: Tensor<E>,
    pub d_inhibitory_bias: Tensor<E>,
    pub d_decay_raw: Tensor<E>,
}

/// decay_raw value for which the effective decay equals 1.
pub fn decay_raw_for_unit_decay<E: Element>() -> E {
    elem(((1.0 - DECAY_FLOOR).exp() - 1.0).ln())
}

impl<E: Element> ShuntingLayer<E> {
    pub fn new(in_channels: usize, out_channels: usize, ksize: usize, rng: &mut SeededRng) -> Self {
        let fan_in = in_channels * ksize * ksize;
        let shape = [out_channels, in_channels, ksize, ksize];
        ShuntingLayer {
            main_kernel: fan_in_uniform(&shape, fan_in, rng),
            main_bias: Tensor::zeros(&[out_channels]).unwrap(),
            inhibitory_kernel: fan_in_uniform(&shape, fan_in, rng),
            inhibitory_bias: Tensor::zeros(&[out_channels]).unwrap(),
            decay_raw: Tensor::full(&[out_channels], decay_raw_for_unit_decay()).unwrap(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.main_kernel.shape()[0]
    }

    /// Effective decay per channel: softplus(decay_raw) + 0.01, always > 0.
    pub fn decay(&self) -> Tensor<E> {
        self.decay_raw.map(|d| softplus(d) + elem(DECAY_FLOOR))
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<(Tensor<E>, ShuntingCache<E>)> {
        if self.main_kernel.shape() != self.inhibitory_kernel.shape() {
            return Err(Error::Shape("main/inhibitory kernel shapes differ".into()));
        }
        let pre_main = conv2d(x, &self.main_kernel, &self.main_bias, Padding::Same, 1)?;
        let pre_inh = conv2d(x, &self.inhibitory_kernel, &self.inhibitory_bias, Padding::Same, 1)?;
        let u = super::relu_forward(&pre_main);
        let i = super::relu_forward(&pre_inh);
        let decay = self.decay();

        let (n, c, h, w) = (
            u.shape()[0],
            u.shape()[1],
            u.shape()[2],
            u.shape()[3],
        );
        let mut out = Tensor::zeros_like(&u);
        for b in 0..n {
            for ch in 0..c {
                let a = decay.data()[ch];
                let base = (b * c + ch) * h * w;
                for idx in base..base + h * w {
                    out.data_mut()[idx] = u.data()[idx] / (a + i.data()[idx]);
                }
            }
        }
        Ok((
            out,
            ShuntingCache {
                input: x.clone(),
                pre_main,
                pre_inh,
                excitatory: u,
                inhibitory: i,
                decay,
            },
        ))
    }

    /// Quotient-rule backward: dS/du = 1/(a+I), dS/dI = dS/da = -u/(a+I)^2,
    /// routed through the ReLUs and the two convolutions. The decay gradient
    /// is summed over batch and spatial positions (a is shared per channel)
    /// and multiplied by softplus'(decay_raw).
    pub fn backward(
        &self,
        ds: &Tensor<E>,
        cache: &ShuntingCache<E>,
    ) -> Result<(Tensor<E>, ShuntingGrads<E>)> {
        let u = &cache.excitatory;
        let i = &cache.inhibitory;
        let (n, c, h, w) = (
            u.shape()[0],
            u.shape()[1],
            u.shape()[2],
            u.shape()[3],
        );
        let mut du = Tensor::zeros_like(u);
        let mut di = Tensor::zeros_like(i);
        let mut da = Tensor::<E>::zeros(&[c])?;
        for b in 0..n {
            for ch in 0..c {
                let a = cache.decay.data()[ch];
                let base = (b * c + ch) * h * w;
                let mut da_ch = E::zero();
                for idx in base..base + h * w {
                    let denom = a + i.data()[idx];
                    let g = ds.data()[idx];
                    du.data_mut()[idx] = g / denom;
                    let shared = -g * u.data()[idx] / (denom * denom);
                    di.data_mut()[idx] = shared;
                    da_ch += shared;
                }
                da.data_mut()[ch] += da_ch;
            }
        }

        let d_pre_main = super::relu_backward(&du, &cache.pre_main)?;
        let d_pre_inh = super::relu_backward(&di, &cache.pre_inh)?;
        let (dx_main, dk_main, db_main) =
            conv2d_backward(&cache.input, &self.main_kernel, &d_pre_main, Padding::Same, 1)?;
        let (dx_inh, dk_inh, db_inh) = conv2d_backward(
            &cache.input,
            &self.inhibitory_kernel,
            &d_pre_inh,
            Padding::Same,
            1,
        )?;
        let mut dx = dx_main;
        dx.add_scaled(&dx_inh, E::one())?;

        let d_decay_raw = da.zip_map(&self.decay_raw, |g, raw| g * sigmoid(raw))?;
        Ok((
            dx,
            ShuntingGrads {
                d_main_kernel: dk_main,
                d_main_bias: db_main,
                d_inhibitory_kernel: dk_inh,
                d_inhibitory_bias: db_inh,
                d_decay_raw,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::relu_forward;
    use crate::tensor::conv2d;

    fn layer_with_unit_decay(rng: &mut SeededRng) -> ShuntingLayer<f32> {
        let mut l = ShuntingLayer::<f32>::new(2, 3, 3, rng);
        l.inhibitory_kernel = Tensor::zeros_like(&l.inhibitory_kernel);
        l.inhibitory_bias = Tensor::zeros_like(&l.inhibitory_bias);
        l.decay_raw = Tensor::full(&[3], decay_raw_for_unit_decay()).unwrap();
        l
    }

    #[test]
    fn zero_inhibition_unit_decay_reduces_to_conv_relu() {
        let mut rng = SeededRng::new(21);
        let l = layer_with_unit_decay(&mut rng);
        let x = Tensor::<f32>::from_fn(&[1, 2, 6, 6], |_| rng.uniform(-1.0, 1.0) as f32).unwrap();
        let (s, _) = l.forward(&x).unwrap();
        let want = relu_forward(
            &conv2d(&x, &l.main_kernel, &l.main_bias, Padding::Same, 1).unwrap(),
        );
        for (a, b) in s.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_numerator_gives_zero_output() {
        let mut rng = SeededRng::new(22);
        let mut l = ShuntingLayer::<f32>::new(2, 3, 3, &mut rng);
        l.main_kernel = Tensor::zeros_like(&l.main_kernel);
        l.main_bias = Tensor::zeros_like(&l.main_bias);
        let x = Tensor::<f32>::from_fn(&[1, 2, 4, 4], |_| rng.uniform(-1.0, 1.0) as f32).unwrap();
        let (s, _) = l.forward(&x).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_scalar_loop_oracle() {
        let mut rng = SeededRng::new(23);
        let l = ShuntingLayer::<f32>::new(2, 2, 3, &mut rng);
        let x = Tensor::<f32>::from_fn(&[1, 2, 6, 6], |_| rng.uniform(-1.0, 1.0) as f32).unwrap();
        let (s, _) = l.forward(&x).unwrap();
        // Direct scalar evaluation: per position, convolve both kernels,
        // apply ReLU to each, divide.
        let relu = |v: f32| v.max(0.0);
        for co in 0..2usize {
            let a = softplus(l.decay_raw.data()[co]) + DECAY_FLOOR as f32;
            for oy in 0..6usize {
                for ox in 0..6usize {
                    let mut zu = l.main_bias.data()[co];
                    let mut zi = l.inhibitory_bias.data()[co];
                    for ci in 0..2usize {
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let iy = oy as isize + ky as isize - 1;
                                let ix = ox as isize + kx as isize - 1;
                                if iy < 0 || iy >= 6 || ix < 0 || ix >= 6 {
                                    continue;
                                }
                                let xv = x.data()[(ci * 6 + iy as usize) * 6 + ix as usize];
                                zu += xv * l.main_kernel.data()[((co * 2 + ci) * 3 + ky) * 3 + kx];
                                zi += xv
                                    * l.inhibitory_kernel.data()[((co * 2 + ci) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                    let want = relu(zu) / (a + relu(zi));
                    let got = s.data()[(co * 6 + oy) * 6 + ox];
                    assert!((got - want).abs() < 1e-5, "at c{co} {oy},{ox}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn output_bounds_hold() {
        let mut rng = SeededRng::new(24);
        let l = ShuntingLayer::<f32>::new(2, 3, 3, &mut rng);
        let x = Tensor::<f32>::from_fn(&[2, 2, 8, 8], |_| rng.uniform(-1.0, 1.0) as f32).unwrap();
        let (s, cache) = l.forward(&x).unwrap();
        for (idx, &v) in s.data().iter().enumerate() {
            assert!(v >= 0.0);
            assert!(v <= cache.excitatory.data()[idx] / DECAY_FLOOR as f32 + 1e-6);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = SeededRng::new(25);
        let l = ShuntingLayer::<f32>::new(2, 3, 3, &mut rng);
        let x = Tensor::<f32>::from_fn(&[1, 2, 4, 4], |_| rng.uniform(-1.0, 1.0) as f32).unwrap();
        let (s, cache) = l.forward(&x).unwrap();
        let ds = Tensor::zeros_like(&s);
        let (dx, grads) = l.backward(&ds, &cache).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(grads.d_main_kernel.data().iter().all(|&v| v == 0.0));
        assert!(grads.d_decay_raw.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reduced_case_backward_matches_conv_relu_backward() {
        let mut rng = SeededRng::new(26);
        let l = layer_with_unit_decay(&mut rng);
        let x = Tensor::<f32>::from_fn(&[1, 2, 5, 5], |_| rng.uniform(-1.0, 1.0) as f32).unwrap();
        let (s, cache) = l.forward(&x).unwrap();
        let ds = Tensor::<f32>::from_fn(s.shape(), |_| rng.uniform(-1.0, 1.0) as f32).unwrap();
        let (dx, _) = l.backward(&ds, &cache).unwrap();
        // Plain conv+ReLU backward of the same upstream gradient.
        let d_pre = crate::layers::relu_backward(&ds, &cache.pre_main).unwrap();
        let (dx_want, _, _) =
            crate::tensor::conv2d_backward(&x, &l.main_kernel, &d_pre, Padding::Same, 1).unwrap();
        for (a, b) in dx.data().iter().zip(dx_want.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

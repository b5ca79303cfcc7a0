//! N-dimensional row-major real arrays and the convolution/pooling/resize
//! primitives the layer stack is built on.
//!
//! Rank-4 activation tensors are always laid out [N, C, H, W]. The element
//! type is generic over f32/f64; training and inference run in f32, f64
//! exists so gradient checks can use tight tolerances.

use crate::error::{Error, Result};
use std::fmt::Debug;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Real32,
    Real64,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::Real32 => "real32",
            Dtype::Real64 => "real64",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "real32" => Some(Dtype::Real32),
            "real64" => Some(Dtype::Real64),
            _ => None,
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::Real32 => 4,
            Dtype::Real64 => 8,
        }
    }
}

pub trait Element:
    num_traits::Float
    + num_traits::NumAssignOps
    + Default
    + Debug
    + Send
    + Sync
    + Copy
    + 'static
{
    const DTYPE: Dtype;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::Real32;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::Real64;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Shorthand for converting a literal into the element type.
pub fn elem<E: Element>(x: f64) -> E {
    E::from_f64(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("empty shape list".into()));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Shape(format!("zero dimension in shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: &[usize], value: E) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, E::zero())
    }

    pub fn zeros_like(other: &Self) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![E::zero(); other.data.len()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> E) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(E, E) -> E) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// self += alpha * other, shapes must match.
    pub fn add_scaled(&mut self, other: &Self, alpha: E) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: E) {
        for a in self.data.iter_mut() {
            *a *= alpha;
        }
    }

    pub fn sum(&self) -> E {
        self.data.iter().fold(E::zero(), |acc, &x| acc + x)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Cast to another element type through f64.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| F::from_f64(x.to_f64())).collect(),
        }
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::Shape(format!(
                "{what}: expected rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

/// Standard matrix product of rank-2 tensors [m,k]x[k,n] -> [m,n].
pub fn matmul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    a.expect_rank(2, "matmul lhs")?;
    b.expect_rank(2, "matmul rhs")?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dims disagree: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![E::zero(); m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b.data[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose2<E: Element>(a: &Tensor<E>) -> Result<Tensor<E>> {
    a.expect_rank(2, "transpose")?;
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![E::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

fn conv_check<E: Element>(
    input: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: &Tensor<E>,
    padding: Padding,
    stride: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize, usize)> {
    input.expect_rank(4, "conv2d input")?;
    kernel.expect_rank(4, "conv2d kernel")?;
    bias.expect_rank(1, "conv2d bias")?;
    let (n, cin, h, w) = (
        input.shape[0],
        input.shape[1],
        input.shape[2],
        input.shape[3],
    );
    let (cout, kcin, kh, kw) = (
        kernel.shape[0],
        kernel.shape[1],
        kernel.shape[2],
        kernel.shape[3],
    );
    if cin != kcin {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input {cin}, kernel {kcin}"
        )));
    }
    if bias.shape[0] != cout {
        return Err(Error::Shape(format!(
            "conv2d bias length {} vs {cout} output channels",
            bias.shape[0]
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv2d stride must be >= 1".into()));
    }
    if padding == Padding::Same && (kh % 2 == 0 || kw % 2 == 0) {
        return Err(Error::Shape(format!(
            "same padding requires odd kernel, got {kh}x{kw}"
        )));
    }
    let (pt, pl) = match padding {
        Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
        Padding::Valid => (0, 0),
    };
    let (ph, pw) = match padding {
        Padding::Same => (kh - 1, kw - 1),
        Padding::Valid => (0, 0),
    };
    if h + ph < kh || w + pw < kw {
        return Err(Error::Shape(format!(
            "conv2d input {h}x{w} smaller than kernel {kh}x{kw}"
        )));
    }
    Ok((n, cin, h, w, cout, kh, kw, pt, pl))
}

/// 2-D cross-correlation with zero padding. Input [N,Cin,H,W], kernel
/// [Cout,Cin,kh,kw], bias [Cout]. `Same` + stride 1 preserves H,W.
pub fn conv2d<E: Element>(
    input: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: &Tensor<E>,
    padding: Padding,
    stride: usize,
) -> Result<Tensor<E>> {
    let (n, cin, h, w, cout, kh, kw, pt, pl) =
        conv_check(input, kernel, bias, padding, stride)?;
    let (ph, pw) = match padding {
        Padding::Same => (kh - 1, kw - 1),
        Padding::Valid => (0, 0),
    };
    let oh = (h + ph - kh) / stride + 1;
    let ow = (w + pw - kw) / stride + 1;

    let mut out = vec![E::zero(); n * cout * oh * ow];
    let xin = input.data();
    let kd = kernel.data();
    for b in 0..n {
        for co in 0..cout {
            let obase = (b * cout + co) * oh * ow;
            let bval = bias.data()[co];
            for v in &mut out[obase..obase + oh * ow] {
                *v = bval;
            }
            for ci in 0..cin {
                let ibase = (b * cin + ci) * h * w;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = kd[((co * cin + ci) * kh + ky) * kw + kx];
                        if wv == E::zero() {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = oy * stride + ky;
                            if iy < pt || iy - pt >= h {
                                continue;
                            }
                            let irow = ibase + (iy - pt) * w;
                            let orow = obase + oy * ow;
                            for ox in 0..ow {
                                let ix = ox * stride + kx;
                                if ix < pl || ix - pl >= w {
                                    continue;
                                }
                                out[orow + ox] += wv * xin[irow + (ix - pl)];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out)
}

/// Gradients of `conv2d` given upstream dy [N,Cout,OH,OW].
/// Returns (d_input, d_kernel, d_bias).
pub fn conv2d_backward<E: Element>(
    input: &Tensor<E>,
    kernel: &Tensor<E>,
    dy: &Tensor<E>,
    padding: Padding,
    stride: usize,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let cout = kernel.shape()[0];
    let zero_bias = Tensor::zeros(&[cout])?;
    let (n, cin, h, w, cout, kh, kw, pt, pl) =
        conv_check(input, kernel, &zero_bias, padding, stride)?;
    dy.expect_rank(4, "conv2d_backward dy")?;
    let (oh, ow) = (dy.shape()[2], dy.shape()[3]);
    if dy.shape()[0] != n || dy.shape()[1] != cout {
        return Err(Error::Shape(format!(
            "conv2d_backward dy shape {:?} inconsistent",
            dy.shape()
        )));
    }

    let mut dx = vec![E::zero(); n * cin * h * w];
    let mut dk = vec![E::zero(); cout * cin * kh * kw];
    let mut db = vec![E::zero(); cout];
    let xin = input.data();
    let kd = kernel.data();
    let dyd = dy.data();

    for b in 0..n {
        for co in 0..cout {
            let obase = (b * cout + co) * oh * ow;
            let mut bsum = E::zero();
            for &g in &dyd[obase..obase + oh * ow] {
                bsum += g;
            }
            db[co] += bsum;
            for ci in 0..cin {
                let ibase = (b * cin + ci) * h * w;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kidx = ((co * cin + ci) * kh + ky) * kw + kx;
                        let wv = kd[kidx];
                        let mut wgrad = E::zero();
                        for oy in 0..oh {
                            let iy = oy * stride + ky;
                            if iy < pt || iy - pt >= h {
                                continue;
                            }
                            let irow = ibase + (iy - pt) * w;
                            let orow = obase + oy * ow;
                            for ox in 0..ow {
                                let ix = ox * stride + kx;
                                if ix < pl || ix - pl >= w {
                                    continue;
                                }
                                let g = dyd[orow + ox];
                                wgrad += g * xin[irow + (ix - pl)];
                                dx[irow + (ix - pl)] += g * wv;
                            }
                        }
                        dk[kidx] += wgrad;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![n, cin, h, w], dx)?,
        Tensor::new(vec![cout, cin, kh, kw], dk)?,
        Tensor::new(vec![cout], db)?,
    ))
}

/// Non-overlapping 2x2 max pooling. H and W must be even. The mask stores,
/// per output element, the flat index of the winning input element; ties
/// break toward the lowest flat index.
pub fn maxpool2<E: Element>(input: &Tensor<E>) -> Result<(Tensor<E>, Vec<usize>)> {
    input.expect_rank(4, "maxpool2 input")?;
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2 requires even H,W, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![E::zero(); n * c * oh * ow];
    let mut mask = vec![0usize; n * c * oh * ow];
    let xin = input.data();
    for b in 0..n {
        for ch in 0..c {
            let ibase = (b * c + ch) * h * w;
            let obase = (b * c + ch) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i00 = ibase + (2 * oy) * w + 2 * ox;
                    let candidates = [i00, i00 + 1, i00 + w, i00 + w + 1];
                    let mut best = candidates[0];
                    for &idx in &candidates[1..] {
                        if xin[idx] > xin[best] {
                            best = idx;
                        }
                    }
                    out[obase + oy * ow + ox] = xin[best];
                    mask[obase + oy * ow + ox] = best;
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, mask))
}

/// Route pooled gradients back through the argmax mask.
pub fn maxpool2_backward<E: Element>(
    dy: &Tensor<E>,
    mask: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<E>> {
    if dy.len() != mask.len() {
        return Err(Error::Shape("maxpool2_backward mask/dy length mismatch".into()));
    }
    let mut dx = Tensor::zeros(input_shape)?;
    for (&g, &idx) in dy.data().iter().zip(mask) {
        dx.data_mut()[idx] += g;
    }
    Ok(dx)
}

/// Bilinear resize of a [C,H,W] tensor using the half-pixel-center
/// coordinate convention.
pub fn resize_bilinear<E: Element>(
    input: &Tensor<E>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<E>> {
    input.expect_rank(3, "resize_bilinear input")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("resize_bilinear target size must be positive".into()));
    }
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let mut out = vec![E::zero(); c * out_h * out_w];
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let xin = input.data();
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let base = ch * h * w;
                let v00 = xin[base + y0 * w + x0].to_f64();
                let v01 = xin[base + y0 * w + x1].to_f64();
                let v10 = xin[base + y1 * w + x0].to_f64();
                let v11 = xin[base + y1 * w + x1].to_f64();
                let top = v00 * (1.0 - wx) + v01 * wx;
                let bot = v10 * (1.0 - wx) + v11 * wx;
                out[ch * out_h * out_w + oy * out_w + ox] =
                    elem(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

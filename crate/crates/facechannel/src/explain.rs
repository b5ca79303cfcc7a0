//! Gradient-weighted class activation maps.
//!
//! For a chosen output unit, the gradient of that unit w.r.t. the deepest
//! pooled feature map is averaged spatially into per-channel weights; the
//! weighted, ReLU-clipped channel sum is upsampled to the input resolution
//! and normalized to [0,1]. High values mark image regions that drove the
//! prediction.

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{LayerOp, Model};
use crate::tensor::{elem, resize_bilinear, Element, Tensor};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct SaliencyMap<E: Element> {
    /// [1, S, S] heatmap in [0,1] at the model's input resolution.
    pub heatmap: Tensor<E>,
    /// Output unit the map explains (class index, or 0=arousal 1=valence).
    pub output_index: usize,
    /// Name of the layer whose activations were weighted.
    pub layer_name: String,
}

/// Default attribution site: the shunting layer's output. It is the
/// deepest non-negative feature map (like a post-ReLU activation) and
/// keeps the pre-pool spatial resolution, both of which make the weighted
/// channel sum easier to localize. Falls back to the deepest max pool for
/// models without a shunting layer.
fn attribution_site<E: Element>(model: &Model<E>) -> Result<usize> {
    model
        .layers
        .iter()
        .rposition(|l| matches!(l.op, LayerOp::Shunting(_)))
        .or_else(|| {
            model
                .layers
                .iter()
                .rposition(|l| matches!(l.op, LayerOp::MaxPool))
        })
        .ok_or_else(|| Error::Config("model has no shunting or pooling layer".into()))
}

/// Compute the saliency map for `output_index` on a single preprocessed
/// image ([C,S,S], values in [-1,1]). Runs in inference mode.
pub fn gradcam<E: Element>(
    model: &mut Model<E>,
    image: &Tensor<E>,
    output_index: usize,
) -> Result<SaliencyMap<E>> {
    let arity = model.config.head.arity();
    if output_index >= arity {
        return Err(Error::Param(format!(
            "output index {output_index} out of range for head arity {arity}"
        )));
    }
    if image.rank() != 3 {
        return Err(Error::Shape(format!(
            "gradcam expects a single [C,H,W] image, got {:?}",
            image.shape()
        )));
    }
    let mut batch_shape = vec![1];
    batch_shape.extend_from_slice(image.shape());
    let input = image.clone().reshape(&batch_shape)?;

    let site = attribution_site(model)?;
    let (_, caches, activation) =
        model.forward_capture(&input, Mode::Infer, None, true, Some(site))?;
    let caches = caches.expect("keep_caches was requested");
    let activation = activation.expect("capture site is a valid layer index");

    let mut d_out = Tensor::<E>::zeros(&[1, arity])?;
    d_out.data_mut()[output_index] = E::one();
    let back = model.backward(&caches, d_out, Some(site))?;
    let d_act = back
        .captured
        .ok_or_else(|| Error::Param("backward did not reach the capture site".into()))?;

    let (k, h, w) = (
        activation.shape()[1],
        activation.shape()[2],
        activation.shape()[3],
    );
    let hw = h * w;
    let inv_hw = elem::<E>(1.0 / hw as f64);
    let mut map = vec![E::zero(); hw];
    for ch in 0..k {
        let a = &activation.data()[ch * hw..(ch + 1) * hw];
        let g = &d_act.data()[ch * hw..(ch + 1) * hw];
        let mut weight = E::zero();
        for &gv in g {
            weight = weight + gv;
        }
        weight = weight * inv_hw;
        for (m, &av) in map.iter_mut().zip(a) {
            *m = *m + weight * av;
        }
    }
    for m in &mut map {
        if m.to_f64() < 0.0 {
            *m = E::zero();
        }
    }

    let size = model.config.input_size;
    let coarse = Tensor::new(vec![1, h, w], map)?;
    let mut heatmap = resize_bilinear(&coarse, size, size)?;
    let max = heatmap
        .data()
        .iter()
        .map(|&v| v.to_f64())
        .fold(0.0f64, f64::max);
    if max > 1e-12 {
        let inv = elem::<E>(1.0 / max);
        heatmap = heatmap.map(|v| v * inv);
    }
    Ok(SaliencyMap {
        heatmap,
        output_index,
        layer_name: model.layers[site].name.clone(),
    })
}

/// Blend a [0,1] grayscale image ([1,S,S]) with a saliency map into an RGB
/// overlay and write it as a P6 file: red = 0.5*gray + 0.5*heat,
/// green = blue = 0.5*gray.
pub fn render_heatmap<E: Element>(
    gray: &Tensor<E>,
    map: &SaliencyMap<E>,
    path: &Path,
) -> Result<()> {
    if gray.shape() != map.heatmap.shape() {
        return Err(Error::Shape(format!(
            "image {:?} and heatmap {:?} sizes differ",
            gray.shape(),
            map.heatmap.shape()
        )));
    }
    let (h, w) = (gray.shape()[1], gray.shape()[2]);
    let mut data = vec![E::zero(); 3 * h * w];
    let half = elem::<E>(0.5);
    for i in 0..h * w {
        let g = half * gray.data()[i];
        data[i] = g + half * map.heatmap.data()[i];
        data[h * w + i] = g;
        data[2 * h * w + i] = g;
    }
    let rgb = Tensor::new(vec![3, h, w], data)?;
    crate::data::netpbm::encode_image(&rgb, path)
}

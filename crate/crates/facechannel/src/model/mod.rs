//! Model assembly: the layer stack, trainability control, parameter
//! accounting, and checkpoint serialization.

pub mod checkpoint;
mod config;

pub use config::{HeadSpec, ModelConfig};

use crate::error::{Error, Result};
use crate::layers::batchnorm::BatchNormCache;
use crate::layers::conv::ConvCache;
use crate::layers::dense::DenseCache;
use crate::layers::dropout::DropoutCache;
use crate::layers::pool::PoolCache;
use crate::layers::shunting::ShuntingCache;
use crate::layers::{
    dropout_backward, dropout_forward, relu_backward, relu_forward, softmax, tanh_backward,
    tanh_forward, BatchNorm2d, Conv2dLayer, DenseLayer, Mode, ShuntingLayer,
};
use crate::layers::pool::{maxpool_backward, maxpool_forward};
use crate::rng::SeededRng;
use crate::tensor::{Element, Tensor};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub enum LayerOp<E: Element> {
    Conv(Conv2dLayer<E>),
    BatchNorm(BatchNorm2d<E>),
    Relu,
    Shunting(ShuntingLayer<E>),
    MaxPool,
    Dropout(f64),
    Flatten,
    Dense(DenseLayer<E>),
    /// Row-wise softmax head activation. Its backward is a pass-through:
    /// upstream gradients entering here must already be w.r.t. the logits
    /// (the cross-entropy loss produces exactly that).
    Softmax,
    Tanh,
}

#[derive(Debug, Clone)]
pub struct Layer<E: Element> {
    pub name: String,
    pub op: LayerOp<E>,
    pub trainable: bool,
}

#[derive(Debug, Clone)]
pub enum LayerCache<E: Element> {
    Conv(ConvCache<E>),
    BatchNorm(BatchNormCache<E>),
    Relu(Tensor<E>),
    Shunting(ShuntingCache<E>),
    Pool(PoolCache),
    Dropout(DropoutCache<E>),
    Flatten(Vec<usize>),
    Dense(DenseCache<E>),
    Softmax,
    Tanh(Tensor<E>),
}

/// Per-layer parameter gradients, in the same order as `param_tensors`.
pub type ModelGrads<E> = Vec<Vec<Tensor<E>>>;

#[derive(Debug)]
pub struct BackwardResult<E: Element> {
    pub grads: ModelGrads<E>,
    pub d_input: Tensor<E>,
    /// Gradient w.r.t. the output of the requested capture layer.
    pub captured: Option<Tensor<E>>,
}

#[derive(Debug, Clone)]
pub struct Model<E: Element = f32> {
    pub config: ModelConfig,
    pub layers: Vec<Layer<E>>,
}

/// Build the layer stack from a config. Each block is
/// [conv -> BN -> ReLU] per listed width; the last block additionally ends
/// with the shunting layer (followed by its own BN); every block closes
/// with maxpool and dropout. Then flatten -> dense -> ReLU -> head.
pub fn build_facechannel<E: Element>(config: &ModelConfig) -> Result<Model<E>> {
    config.validate()?;
    let mut rng = SeededRng::from_seed_stream(config.seed, 0);
    let mut layers: Vec<Layer<E>> = Vec::new();
    let mut channels = config.input_channels;
    let push = |layers: &mut Vec<Layer<E>>, name: String, op: LayerOp<E>| {
        layers.push(Layer {
            name,
            op,
            trainable: true,
        });
    };

    let nblocks = config.num_blocks();
    for (bi, widths) in config.block_channels.iter().enumerate() {
        let b = bi + 1;
        for (ci, &width) in widths.iter().enumerate() {
            let c = ci + 1;
            push(
                &mut layers,
                format!("block{b}.conv{c}"),
                LayerOp::Conv(Conv2dLayer::new(channels, width, 3, &mut rng)),
            );
            push(
                &mut layers,
                format!("block{b}.bn{c}"),
                LayerOp::BatchNorm(BatchNorm2d::new(width)),
            );
            push(&mut layers, format!("block{b}.relu{c}"), LayerOp::Relu);
            channels = width;
        }
        if bi == nblocks - 1 {
            push(
                &mut layers,
                format!("block{b}.shunt"),
                LayerOp::Shunting(ShuntingLayer::new(
                    channels,
                    config.shunting_channels,
                    3,
                    &mut rng,
                )),
            );
            push(
                &mut layers,
                format!("block{b}.shunt_bn"),
                LayerOp::BatchNorm(BatchNorm2d::new(config.shunting_channels)),
            );
            channels = config.shunting_channels;
        }
        push(&mut layers, format!("block{b}.pool"), LayerOp::MaxPool);
        push(
            &mut layers,
            format!("block{b}.dropout"),
            LayerOp::Dropout(config.dropout_rate),
        );
    }

    push(&mut layers, "flatten".into(), LayerOp::Flatten);
    push(
        &mut layers,
        "dense".into(),
        LayerOp::Dense(DenseLayer::new(
            config.flatten_len(),
            config.dense_units,
            &mut rng,
        )),
    );
    push(&mut layers, "dense_relu".into(), LayerOp::Relu);
    push(
        &mut layers,
        "head".into(),
        LayerOp::Dense(DenseLayer::new(
            config.dense_units,
            config.head.arity(),
            &mut rng,
        )),
    );
    match config.head {
        HeadSpec::Categorical { .. } => push(&mut layers, "head_act".into(), LayerOp::Softmax),
        HeadSpec::Dimensional => push(&mut layers, "head_act".into(), LayerOp::Tanh),
    }

    Ok(Model {
        config: config.clone(),
        layers,
    })
}

impl<E: Element> LayerOp<E> {
    pub fn param_tensors(&self) -> Vec<(&'static str, &Tensor<E>)> {
        match self {
            LayerOp::Conv(l) => vec![("kernel", &l.kernel), ("bias", &l.bias)],
            LayerOp::BatchNorm(l) => vec![("gamma", &l.gamma), ("beta", &l.beta)],
            LayerOp::Shunting(l) => vec![
                ("main_kernel", &l.main_kernel),
                ("main_bias", &l.main_bias),
                ("inhibitory_kernel", &l.inhibitory_kernel),
                ("inhibitory_bias", &l.inhibitory_bias),
                ("decay_raw", &l.decay_raw),
            ],
            LayerOp::Dense(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            _ => vec![],
        }
    }

    pub fn param_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<E>)> {
        match self {
            LayerOp::Conv(l) => vec![("kernel", &mut l.kernel), ("bias", &mut l.bias)],
            LayerOp::BatchNorm(l) => vec![("gamma", &mut l.gamma), ("beta", &mut l.beta)],
            LayerOp::Shunting(l) => vec![
                ("main_kernel", &mut l.main_kernel),
                ("main_bias", &mut l.main_bias),
                ("inhibitory_kernel", &mut l.inhibitory_kernel),
                ("inhibitory_bias", &mut l.inhibitory_bias),
                ("decay_raw", &mut l.decay_raw),
            ],
            LayerOp::Dense(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            _ => vec![],
        }
    }

    /// Non-trainable state tensors (batch-norm running statistics).
    pub fn state_tensors(&self) -> Vec<(&'static str, &Tensor<E>)> {
        match self {
            LayerOp::BatchNorm(l) => vec![
                ("running_mean", &l.running_mean),
                ("running_var", &l.running_var),
            ],
            _ => vec![],
        }
    }

    pub fn state_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<E>)> {
        match self {
            LayerOp::BatchNorm(l) => vec![
                ("running_mean", &mut l.running_mean),
                ("running_var", &mut l.running_var),
            ],
            _ => vec![],
        }
    }
}

impl<E: Element> Model<E> {
    pub fn forward(
        &mut self,
        input: &Tensor<E>,
        mode: Mode,
        rng: Option<&mut SeededRng>,
        keep_caches: bool,
    ) -> Result<(Tensor<E>, Option<Vec<LayerCache<E>>>)> {
        let (y, caches, _) = self.forward_capture(input, mode, rng, keep_caches, None)?;
        Ok((y, caches))
    }

    /// Like `forward`, but additionally returns the activation produced by
    /// layer `capture_output_of` (its output tensor).
    pub fn forward_capture(
        &mut self,
        input: &Tensor<E>,
        mode: Mode,
        mut rng: Option<&mut SeededRng>,
        keep_caches: bool,
        capture_output_of: Option<usize>,
    ) -> Result<(Tensor<E>, Option<Vec<LayerCache<E>>>, Option<Tensor<E>>)> {
        let s = self.config.input_size;
        if input.rank() != 4
            || input.shape()[1] != self.config.input_channels
            || input.shape()[2] != s
            || input.shape()[3] != s
        {
            return Err(Error::Shape(format!(
                "model input must be [N,{},{s},{s}], got {:?}",
                self.config.input_channels,
                input.shape()
            )));
        }
        let mut caches = if keep_caches { Some(Vec::new()) } else { None };
        let mut activation = None;
        let mut x = input.clone();
        for (li, layer) in self.layers.iter_mut().enumerate() {
            let (y, cache) = match &mut layer.op {
                LayerOp::Conv(l) => {
                    let (y, c) = l.forward(&x)?;
                    (y, LayerCache::Conv(c))
                }
                LayerOp::BatchNorm(l) => {
                    // A frozen batch-norm layer keeps using (and not
                    // updating) its running statistics while training.
                    let eff = if mode == Mode::Train && layer.trainable {
                        Mode::Train
                    } else {
                        Mode::Infer
                    };
                    let (y, c) = l.forward(&x, eff)?;
                    (y, LayerCache::BatchNorm(c))
                }
                LayerOp::Relu => {
                    let y = relu_forward(&x);
                    (y, LayerCache::Relu(x.clone()))
                }
                LayerOp::Shunting(l) => {
                    let (y, c) = l.forward(&x)?;
                    (y, LayerCache::Shunting(c))
                }
                LayerOp::MaxPool => {
                    let (y, c) = maxpool_forward(&x)?;
                    (y, LayerCache::Pool(c))
                }
                LayerOp::Dropout(rate) => match (mode, rng.as_deref_mut()) {
                    (Mode::Train, Some(r)) => {
                        let (y, c) = dropout_forward(&x, *rate, Mode::Train, r)?;
                        (y, LayerCache::Dropout(c))
                    }
                    (Mode::Train, None) => {
                        return Err(Error::Param(
                            "train-mode forward requires an rng for dropout".into(),
                        ))
                    }
                    (Mode::Infer, _) => (x.clone(), LayerCache::Dropout(DropoutCache { mask: None })),
                },
                LayerOp::Flatten => {
                    let n = x.shape()[0];
                    let flat = x.len() / n;
                    let shape = x.shape().to_vec();
                    (x.reshape(&[n, flat])?, LayerCache::Flatten(shape))
                }
                LayerOp::Dense(l) => {
                    let (y, c) = l.forward(&x)?;
                    (y, LayerCache::Dense(c))
                }
                LayerOp::Softmax => {
                    let y = softmax(&x)?;
                    (y, LayerCache::Softmax)
                }
                LayerOp::Tanh => {
                    let y = tanh_forward(&x);
                    let cache = y.clone();
                    (y, LayerCache::Tanh(cache))
                }
            };
            if let Some(cs) = &mut caches {
                cs.push(cache);
            }
            x = y;
            if capture_output_of == Some(li) {
                activation = Some(x.clone());
            }
        }
        Ok((x, caches, activation))
    }

    /// Reverse walk over the stack. `d_output` is the gradient w.r.t. the
    /// model output (for a categorical model: w.r.t. the logits, since the
    /// softmax layer backward is a pass-through). `capture_output_of`
    /// additionally returns the gradient flowing into that layer's output.
    pub fn backward(
        &self,
        caches: &[LayerCache<E>],
        d_output: Tensor<E>,
        capture_output_of: Option<usize>,
    ) -> Result<BackwardResult<E>> {
        if caches.len() != self.layers.len() {
            return Err(Error::Param("cache list does not match layer list".into()));
        }
        let mut grads: ModelGrads<E> = vec![Vec::new(); self.layers.len()];
        let mut g = d_output;
        let mut captured = None;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let cache = &caches[i];
            g = match (&layer.op, cache) {
                (LayerOp::Conv(l), LayerCache::Conv(c)) => {
                    let (dx, lg) = l.backward(&g, c)?;
                    grads[i] = vec![lg.d_kernel, lg.d_bias];
                    dx
                }
                (LayerOp::BatchNorm(l), LayerCache::BatchNorm(c)) => {
                    let (dx, lg) = l.backward(&g, c)?;
                    grads[i] = vec![lg.d_gamma, lg.d_beta];
                    dx
                }
                (LayerOp::Relu, LayerCache::Relu(x)) => relu_backward(&g, x)?,
                (LayerOp::Shunting(l), LayerCache::Shunting(c)) => {
                    let (dx, lg) = l.backward(&g, c)?;
                    grads[i] = vec![
                        lg.d_main_kernel,
                        lg.d_main_bias,
                        lg.d_inhibitory_kernel,
                        lg.d_inhibitory_bias,
                        lg.d_decay_raw,
                    ];
                    dx
                }
                (LayerOp::MaxPool, LayerCache::Pool(c)) => maxpool_backward(&g, c)?,
                (LayerOp::Dropout(_), LayerCache::Dropout(c)) => dropout_backward(&g, c)?,
                (LayerOp::Flatten, LayerCache::Flatten(shape)) => g.reshape(shape)?,
                (LayerOp::Dense(l), LayerCache::Dense(c)) => {
                    let (dx, lg) = l.backward(&g, c)?;
                    grads[i] = vec![lg.d_weight, lg.d_bias];
                    dx
                }
                (LayerOp::Softmax, LayerCache::Softmax) => g,
                (LayerOp::Tanh, LayerCache::Tanh(y)) => tanh_backward(&g, y)?,
                _ => return Err(Error::Param(format!("cache mismatch at layer {i}"))),
            };
            if i > 0 && capture_output_of == Some(i - 1) {
                captured = Some(g.clone());
            }
        }
        Ok(BackwardResult {
            grads,
            d_input: g,
            captured,
        })
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    fn flatten_index(&self) -> usize {
        self.layers
            .iter()
            .position(|l| matches!(l.op, LayerOp::Flatten))
            .expect("model always has a flatten layer")
    }

    /// Exact count of parameter elements (kernels, biases, gamma/beta,
    /// decay_raw). Batch-norm running statistics are never counted.
    pub fn count_params(&self, trainable_only: bool) -> usize {
        self.layers
            .iter()
            .filter(|l| !trainable_only || l.trainable)
            .map(|l| {
                l.op.param_tensors()
                    .iter()
                    .map(|(_, t)| t.len())
                    .sum::<usize>()
            })
            .sum()
    }

    /// Mark the whole convolutional stack (everything before flatten)
    /// non-trainable. Frozen batch-norm layers switch to running
    /// statistics during subsequent training.
    pub fn freeze_convolutional_stack(&mut self) {
        let idx = self.flatten_index();
        for layer in &mut self.layers[..idx] {
            layer.trainable = false;
        }
    }

    pub fn unfreeze_all(&mut self) {
        for layer in &mut self.layers {
            layer.trainable = true;
        }
    }

    /// Re-initialize the head for a new output arity/activation; the conv
    /// stack and the 200-unit dense layer are untouched.
    pub fn replace_head(&mut self, head: HeadSpec, rng: &mut SeededRng) -> Result<()> {
        self.config.head = head.clone();
        self.config.validate()?;
        let head_idx = self
            .layer_index("head")
            .ok_or_else(|| Error::Config("model has no head layer".into()))?;
        self.layers[head_idx].op = LayerOp::Dense(DenseLayer::new(
            self.config.dense_units,
            head.arity(),
            rng,
        ));
        self.layers[head_idx].trainable = true;
        let act_idx = self
            .layer_index("head_act")
            .ok_or_else(|| Error::Config("model has no head activation".into()))?;
        self.layers[act_idx].op = match head {
            HeadSpec::Categorical { .. } => LayerOp::Softmax,
            HeadSpec::Dimensional => LayerOp::Tanh,
        };
        Ok(())
    }

    fn hash_layers(&self, range: std::ops::Range<usize>) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        for layer in &self.layers[range] {
            for (_, t) in layer
                .op
                .param_tensors()
                .into_iter()
                .chain(layer.op.state_tensors())
            {
                buf.clear();
                for &v in t.data() {
                    v.write_le(&mut buf);
                }
                hasher.update(&buf);
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// SHA-256 over the concatenated little-endian bytes of every tensor
    /// in the convolutional stack (params and running stats).
    pub fn conv_stack_hash(&self) -> String {
        self.hash_layers(0..self.flatten_index())
    }

    /// SHA-256 over every tensor in the model.
    pub fn params_hash(&self) -> String {
        self.hash_layers(0..self.layers.len())
    }

    /// SHA-256 over trainable parameter tensors only, excluding batch-norm
    /// running statistics (which move during any train-mode forward pass).
    pub fn params_only_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        for layer in &self.layers {
            for (_, t) in layer.op.param_tensors() {
                buf.clear();
                for &v in t.data() {
                    v.write_le(&mut buf);
                }
                hasher.update(&buf);
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cast<F: Element>(&self) -> Model<F> {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                name: l.name.clone(),
                trainable: l.trainable,
                op: match &l.op {
                    LayerOp::Conv(c) => LayerOp::Conv(Conv2dLayer {
                        kernel: c.kernel.cast(),
                        bias: c.bias.cast(),
                    }),
                    LayerOp::BatchNorm(b) => LayerOp::BatchNorm(BatchNorm2d {
                        gamma: b.gamma.cast(),
                        beta: b.beta.cast(),
                        running_mean: b.running_mean.cast(),
                        running_var: b.running_var.cast(),
                        momentum: F::from_f64(b.momentum.to_f64()),
                        epsilon: F::from_f64(b.epsilon.to_f64()),
                    }),
                    LayerOp::Relu => LayerOp::Relu,
                    LayerOp::Shunting(s) => LayerOp::Shunting(ShuntingLayer {
                        main_kernel: s.main_kernel.cast(),
                        main_bias: s.main_bias.cast(),
                        inhibitory_kernel: s.inhibitory_kernel.cast(),
                        inhibitory_bias: s.inhibitory_bias.cast(),
                        decay_raw: s.decay_raw.cast(),
                    }),
                    LayerOp::MaxPool => LayerOp::MaxPool,
                    LayerOp::Dropout(r) => LayerOp::Dropout(*r),
                    LayerOp::Flatten => LayerOp::Flatten,
                    LayerOp::Dense(d) => LayerOp::Dense(DenseLayer {
                        weight: d.weight.cast(),
                        bias: d.bias.cast(),
                    }),
                    LayerOp::Softmax => LayerOp::Softmax,
                    LayerOp::Tanh => LayerOp::Tanh,
                },
            })
            .collect();
        Model {
            config: self.config.clone(),
            layers,
        }
    }
}

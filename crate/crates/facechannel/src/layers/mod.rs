//! Differentiable layers with hand-derived backward passes.
//!
//! Each layer's forward returns the output plus a cache of whatever the
//! matching backward needs. Backward must be called with the exact cache
//! produced by the forward it pairs with.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod pool;
pub mod shunting;

pub use activation::{relu_backward, relu_forward, softmax, tanh_backward, tanh_forward};
pub use batchnorm::BatchNorm2d;
pub use conv::Conv2dLayer;
pub use dense::DenseLayer;
pub use dropout::{dropout_backward, dropout_forward};
pub use shunting::ShuntingLayer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

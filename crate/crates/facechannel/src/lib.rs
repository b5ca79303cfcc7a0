//! A facial-expression-recognition stack built from scratch: tensors with
//! hand-derived backward passes, a convolutional network with a shunting
//! inhibition layer, seeded reproducible training, dataset tooling, and
//! gradient-based saliency maps.

pub mod data;
pub mod error;
pub mod explain;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{build_facechannel, HeadSpec, Model, ModelConfig};
pub use rng::SeededRng;
pub use tensor::{Dtype, Element, Tensor};

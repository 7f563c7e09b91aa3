//! From-scratch convolutional-network training and adversarial-robustness
//! evaluation toolkit.
//!
//! The crate provides dense 4-D tensors, manually differentiated layers
//! (including a parameter-free per-pixel channel-mean normalization),
//! softmax log losses for hard labels and label distributions, harmonic
//! image-superposition data synthesis, an l-infinity projected-gradient
//! attack with per-iteration robust accuracy, dataset loaders (IDX,
//! CIFAR-10 binary, synthetic), an SGD-with-momentum training driver and a
//! reproducible command-line front end.

pub mod attack;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fdt;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::{tensor_fill, Shape, Tensor};

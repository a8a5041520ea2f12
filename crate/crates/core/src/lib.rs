//! A small convolutional network training library built around a per-sample
//! automatic gain control (AGC) layer.
//!
//! Each AGC filter computes `(z - λ·mean_s(z))·γ + β`, where `z` is the raw
//! convolution output and `mean_s` is the spatial mean of that sample's own
//! map. No minibatch statistics and no division by the standard deviation are
//! involved, so training and inference use the same model. A reference batch
//! normalization layer is included for comparison.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`memory`], [`tape`]: dense storage, allocation accounting and
//!   a reverse-mode tape over a fixed operation set.
//! * [`layers`]: convolution, AGC, batch normalization, ReLU, pooling with
//!   indices, unpooling and weighted softmax cross-entropy.
//! * [`optim`]: He fan-in init, momentum SGD, the learning-rate × minibatch
//!   rule, GEMS gradient normalization and class-weight normalization.
//! * [`data`]: the synthetic shapes segmentation set.
//! * [`network`], [`trainer`]: the toy encoder/decoder, training loop and
//!   metrics.
//! * [`bench`]: paired AGC/BN step-time and memory measurement.

pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod memory;
pub mod network;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use network::{Network, NetworkSpec, NormMode};
pub use optim::config::{ExperimentConfig, TrainConfig};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};

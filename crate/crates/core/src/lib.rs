//! Spiking neural network training with temporal consistency regularization.
//!
//! Two auxiliary losses are added to cross-entropy training of LIF networks:
//!
//! - a spike-map consistency loss pulling each layer's firing rate towards the
//!   rate of its *stable skeleton*, the AND of adjacent-timestep spike maps;
//! - a perturbation-consistency loss aligning the temperature-softened
//!   prediction of the classifier on the skeleton rate plus Bernoulli spike
//!   noise with the clean prediction.
//!
//! Everything runs on a small tape-based reverse-mode engine ([`grad`]) in
//! 64-bit floating point.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod grad;
pub mod gradcheck;
mod kernels;
pub mod model;
pub mod neuron;
pub mod noise;
pub mod optim;
pub mod skeleton;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::{EventStream, FrameDataset};
pub use error::{Error, Result};
pub use grad::{Gradients, Graph, SpikeFn, Var};
pub use model::{build_architecture, Arch, ForwardOptions, ForwardRecord, SnnModel};
pub use neuron::LifParams;
pub use noise::NoiseKind;
pub use skeleton::{BitOp, ConsistencyFn};
pub use tensor::Tensor;
pub use train::{fit, evaluate, firing_and_energy, MetricsReport, TrainConfig};

//! Desk-scale knowledge-distillation toolkit built on a self-contained
//! tensor/autodiff engine.
//!
//! The crate provides:
//! - [`tensor`]: dense tensors with reverse-mode autodiff and the CNN
//!   primitive set (conv, batchnorm, pooling, linear, activations);
//! - [`nn`]: feature-tapped backbones with per-module classifier heads and
//!   parameter/FLOP accounting;
//! - [`infoest`]: Jensen-Shannon neural estimation of mutual- and
//!   self-information between features;
//! - [`objective`]: loss composition (cross-entropy, logits distillation,
//!   additive/multiplicative information combination, L2 comparator);
//! - [`train`]: SGD with momentum, milestone LR schedules, and the self-,
//!   online-, and offline-distillation loops plus early-exit truncation;
//! - [`data`]: IDX/CIFAR binary loaders, augmentation, and synthetic
//!   distributions with known dependency;
//! - [`checkpoint`] / [`metrics`]: the persistent artifacts of a run.

pub mod checkpoint;
pub mod data;
pub mod elem;
pub mod error;
pub mod infoest;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod rng;
pub mod tensor;
pub mod threading;
pub mod train;

pub use elem::Elem;
pub use error::{Error, Result};
pub use tensor::Tensor;

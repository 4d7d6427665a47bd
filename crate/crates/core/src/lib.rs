//! Frequency-aware dual-transformer toolkit for all-in-one image restoration,
//! built from scratch at desk scale.
//!
//! The crate provides:
//!
//! - a minimal f64 [`tensor`] engine with reverse-mode autodiff;
//! - 2-D DFT band decomposition in [`spectral`];
//! - synthetic degradations and procedural clean images in [`degrade`];
//! - residual-spectrum statistics in [`freq_analysis`];
//! - the degradation-estimation encoder in [`dformer`] and the
//!   degradation-adaptive restoration network in [`rformer`];
//! - contrastive + reconstruction training, metrics and evaluation in
//!   [`train`], [`loss`], [`metrics`] and [`eval`];
//! - checkpointing, a JSON run config, and the `freqrestore` CLI.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod degrade;
pub mod dformer;
pub mod error;
pub mod eval;
pub mod freq_analysis;
pub mod imgio;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod rformer;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod train;
pub mod window;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! Iterative similarity distillation (ISD) for self-supervised learning,
//! with MoCo and BYOL baselines, built on a small reverse-mode autodiff
//! engine.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors and reverse-mode differentiation.
//! - [`nn`]: MLP encoders, the student/teacher pair, SGD and the EMA update.
//! - [`bank`]: the FIFO memory bank of teacher anchor embeddings.
//! - [`losses`]: the ISD, MoCo (InfoNCE) and BYOL objectives.
//! - [`augment`]: stochastic view generation.
//! - [`data`]: synthetic mixtures, IDX files and the unbalanced protocol.
//! - [`train`]: the training loop, frozen-teacher distillation and
//!   checkpoints.
//! - [`eval`]: k-NN, linear probe and recall@k.
//! - [`experiments`]: temperature ablation and the unbalanced-data study.

pub mod augment;
pub mod bank;
mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

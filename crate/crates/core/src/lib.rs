//! Training feed-forward classifiers as discrete optimal-control problems.
//!
//! Each layer's parameters are updated by maximizing an augmented
//! Hamiltonian in closed form, which supports exact L0 (hard-threshold) and
//! elastic-net sparsity. The outer loop searches the augmentation weight ε
//! until a sufficient-decrease condition holds on the current mini-batch.

pub mod cli;
pub mod data;
pub mod error;
pub mod hamiltonian;
pub mod kernels;
pub mod logging;
pub mod metrics;
pub mod network;
pub mod regularization;
pub mod trainer;

pub use error::{Error, Result};
pub use network::{build_model, init_params, Batch, LayerParams, Model, ParamSet};
pub use regularization::{RegKind, Regularizer};
pub use trainer::{train, train_with, Strategy, TrainConfig};

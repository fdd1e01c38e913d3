//! Classifier backbones with a growable head, and the twin generators that
//! are trained against a frozen classifier.
//!
//! Models are value types: parameters and batch-norm buffers are named
//! tensor maps, and forward passes are built on a fresh
//! [`fedgtg_autograd::Graph`] through a [`Binding`] that decides which
//! parameters are trainable.

mod arch;
pub mod checkpoint;
mod error;
mod generator;
pub mod init;
mod layers;
mod model;

pub use arch::ArchConfig;
pub use error::{ModelError, Result};
pub use generator::{noise_labels, sample_noise_labels, GeneratorConfig, GeneratorKind, GeneratorState, SyntheticBatch};
pub use init::derive_seed;
pub use layers::{
    apply_running_updates, forward, Binding, BnStat, Declarations, Layer, Mode, RunningUpdate, Trace, BN_EPS,
    BN_MOMENTUM,
};
pub use model::{param_digest, HeadOutput, ModelState, Trainable, HEAD_BIAS, HEAD_WEIGHT};

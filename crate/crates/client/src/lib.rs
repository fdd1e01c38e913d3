//! Client-side local training.
//!
//! The first task is learned with plain cross-entropy. Later tasks combine
//! cross-entropy restricted to the new classes with three terms that lean on
//! the previous task's artifacts: distillation of the previous head on
//! synthetic features, head fine-tuning on real plus synthetic images, and a
//! quadratic penalty on feature drift weighted by the feature matrix.
//! Baseline trainers (plain averaging and the proximal variant) share the
//! same loop.

mod context;
mod error;
mod pool;
mod synthetic;
mod train;

pub use context::{ClientContext, LocalConfig};
pub use error::{ClientError, Result};
pub use pool::{LocalMethod, ShardPool};
pub use synthetic::build_synthetic_batches;
pub use train::{
    local_train_fedavg, local_train_fedprox, local_train_first_task, local_train_incremental, local_train_masked_ce,
    LocalOutcome,
};

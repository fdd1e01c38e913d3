//! Data side of the simulator: image datasets, class-incremental task
//! streams, per-task Dirichlet partitioning across clients, and procedural
//! corruptions for robustness evaluation.
//!
//! Everything here is pure given a seed. Nothing holds shared mutable state,
//! so streams and shards can be built from concurrent workers.

pub mod corruption;
pub mod dataset;
mod error;
pub mod manifest;
pub mod partition;
pub mod stream;
pub mod synthetic;

pub use corruption::{corrupt_test_set, CorruptionKind, CorruptionSpec};
pub use dataset::{load_dataset, Dataset, ImageSet, LoadOptions, Normalization};
pub use error::{DataError, Result};
pub use manifest::StreamManifest;
pub use partition::{partition_lda, ClientShard};
pub use stream::{build_task_stream, TaskSpec, TaskStream};
pub use synthetic::SyntheticSpec;

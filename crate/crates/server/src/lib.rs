//! Server side of federated class-incremental training with twin generators.
//!
//! Per task the server runs communication rounds (select, broadcast, local
//! training through a [`ClientPool`], weighted aggregation). Once the rounds
//! are done it trains a data generator and a feature generator against the
//! frozen global model and estimates the feature matrix from synthetic
//! features. Those artifacts are broadcast during the next task.
//!
//! This crate never touches client data: clients are reached only through
//! [`ClientPool`], which returns weights and sample counts.

mod aggregate;
mod efm;
mod error;
mod generators;
mod protocol;
mod runlog;
mod task;

pub use aggregate::{aggregate, sample_weights, select_clients, WEIGHT_SUM_TOL};
pub use efm::{compute_efm, fisher_of_features, softmax_fisher, EFMatrix, PSD_TOL, SYMMETRY_TOL};
pub use error::{Result, ServerError};
pub use generators::{
    teacher_agreement, train_data_generator, train_feature_generator, GeneratorBudget, TrainedGenerator,
};
pub use protocol::{
    Broadcast, ClientPool, ClientUpdate, EpochLosses, LocalReport, PreviousTaskBundle, RoundReport,
};
pub use runlog::{read_records, RunLog};
pub use task::{run_task, Evaluator, ServerConfig, ServerState, TaskOutcome};

//! What crosses the server/client boundary.
//!
//! The server only ever holds model weights, generators, the feature matrix
//! and sample counts. Client data stays behind [`ClientPool`].

use fedgtg_models::{GeneratorState, ModelState};
use serde::{Deserialize, Serialize};

use crate::{EFMatrix, Result};

/// Artifacts of task `t - 1` sent with every round of task `t >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviousTaskBundle {
    pub prev_global: ModelState,
    pub data_gen: GeneratorState,
    pub feat_gen: GeneratorState,
    pub efm: EFMatrix,
}

/// Sent to each selected client at the start of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Broadcast {
    pub task_id: usize,
    pub round_id: usize,
    pub global: ModelState,
    /// Class ids introduced by this task, all present in `global`'s head.
    pub current_classes: Vec<usize>,
    pub previous: Option<PreviousTaskBundle>,
}

impl Broadcast {
    /// Head positions of the current classes.
    pub fn current_positions(&self) -> Result<Vec<usize>> {
        Ok(self.global.head_positions(&self.current_classes)?)
    }
}

/// Per-epoch means of each loss term; absent terms are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub batches: usize,
    pub total: f64,
    pub ce: f64,
    pub logits: Option<f64>,
    pub ft: Option<f64>,
    pub efm: Option<f64>,
    pub proximal: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalReport {
    pub client_id: usize,
    pub task_id: usize,
    pub round_id: usize,
    pub trainer: String,
    pub n_samples: usize,
    /// Set when the shard was empty and the model came back unchanged.
    pub empty_shard: bool,
    pub epochs: Vec<EpochLosses>,
}

/// A locally trained model and the sample count it is weighted by.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub model: ModelState,
    pub n_samples: usize,
    pub report: LocalReport,
}

/// The set of clients, each owning its private shard.
pub trait ClientPool: Sync {
    fn n_clients(&self) -> usize;

    /// Trains client `client_id` on its shard of `broadcast.task_id`.
    /// Must be a pure function of its arguments so that rounds are
    /// reproducible regardless of scheduling.
    fn train(&self, client_id: usize, broadcast: &Broadcast, seed: u64) -> Result<ClientUpdate>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub task_id: usize,
    pub round_id: usize,
    pub selected_clients: Vec<usize>,
    /// Sums to 1 within 1e-9.
    pub aggregate_weights: Vec<f64>,
    pub global_eval_accuracy: Option<f64>,
}

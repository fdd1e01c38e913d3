//! Everything one client needs for one round of local training.

use fedgtg_data::ClientShard;
use fedgtg_losses::HyperParams;
use fedgtg_models::ModelState;
use fedgtg_server::{Broadcast, PreviousTaskBundle};
use serde::{Deserialize, Serialize};

use crate::{ClientError, Result};

/// Local optimization settings. SGD without momentum at a constant rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Rows per synthetic image batch and per synthetic feature batch.
    pub synthetic_batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            synthetic_batch_size: 32,
            lr: 0.1,
            weight_decay: 0.1,
        }
    }
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.synthetic_batch_size == 0 {
            return Err(ClientError::Config("batch sizes must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ClientError::Config(format!("invalid step settings {self:?}")));
        }
        Ok(())
    }
}

pub struct ClientContext<'a> {
    pub client_id: usize,
    pub task_id: usize,
    pub round_id: usize,
    pub shard: &'a ClientShard,
    /// Starts as the broadcast global model and is trained in place.
    pub current_model: ModelState,
    /// Class ids of the current task, all known to `current_model`.
    pub current_classes: Vec<usize>,
    /// Previous global model, generators and feature matrix; required for
    /// incremental training and read-only throughout.
    pub previous: Option<&'a PreviousTaskBundle>,
    pub hp: HyperParams,
    pub local: LocalConfig,
}

impl<'a> ClientContext<'a> {
    pub fn from_broadcast(
        client_id: usize,
        shard: &'a ClientShard,
        broadcast: &'a Broadcast,
        hp: HyperParams,
        local: LocalConfig,
    ) -> Self {
        Self {
            client_id,
            task_id: broadcast.task_id,
            round_id: broadcast.round_id,
            shard,
            current_model: broadcast.global.clone(),
            current_classes: broadcast.current_classes.clone(),
            previous: broadcast.previous.as_ref(),
            hp,
            local,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.local.validate()?;
        self.hp.validate()?;
        self.current_model.head_positions(&self.current_classes)?;
        if let Some(c) = self.shard.examples.labels.iter().find(|c| !self.current_model.known_classes.contains(c)) {
            return Err(ClientError::Contract(format!("shard label {c} is unknown to the model")));
        }
        Ok(())
    }

    /// The previous-task bundle, checked against the current model.
    pub fn bundle(&self) -> Result<&'a PreviousTaskBundle> {
        let b = self
            .previous
            .ok_or_else(|| ClientError::Contract(format!("task {} needs the previous task's artifacts", self.task_id)))?;
        let q_old = b.prev_global.n_classes();
        if self.current_model.known_classes[..q_old.min(self.current_model.n_classes())] != b.prev_global.known_classes[..]
        {
            return Err(ClientError::Contract("old classes must lead the current head".into()));
        }
        if b.data_gen.q() != q_old || b.feat_gen.q() != q_old {
            return Err(ClientError::Contract("generators were trained for a different class count".into()));
        }
        if b.efm.dim() != self.current_model.feature_dim {
            return Err(ClientError::Contract("feature matrix width differs from the feature width".into()));
        }
        Ok(b)
    }
}

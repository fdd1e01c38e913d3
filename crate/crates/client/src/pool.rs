//! In-process clients holding their shards, reachable by the server only
//! through [`ClientPool`].

use fedgtg_data::ClientShard;
use fedgtg_losses::HyperParams;
use fedgtg_server::{Broadcast, ClientPool, ClientUpdate, ServerError};
use serde::{Deserialize, Serialize};

use crate::{
    local_train_fedavg, local_train_fedprox, local_train_first_task, local_train_incremental, ClientContext,
    LocalConfig,
};

/// Which local trainer every client runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LocalMethod {
    /// Plain training on the first task, incremental training afterwards.
    FedGtg,
    FedAvg,
    FedProx { mu: f64 },
}

pub struct ShardPool {
    /// `shards[t - 1][client]` is the client's shard of task `t`.
    shards: Vec<Vec<ClientShard>>,
    n_clients: usize,
    pub method: LocalMethod,
    pub hp: HyperParams,
    pub local: LocalConfig,
}

impl ShardPool {
    /// Every task must have one shard per client, in client order.
    pub fn new(
        shards: Vec<Vec<ClientShard>>,
        method: LocalMethod,
        hp: HyperParams,
        local: LocalConfig,
    ) -> crate::Result<Self> {
        let n_clients = shards.first().map_or(0, Vec::len);
        for (t, task) in shards.iter().enumerate() {
            let ok = task.len() == n_clients
                && task.iter().enumerate().all(|(c, s)| s.client_id == c && s.task_id == t + 1);
            if !ok {
                return Err(crate::ClientError::Contract(format!("task {} shards are not one per client", t + 1)));
            }
        }
        Ok(Self {
            shards,
            n_clients,
            method,
            hp,
            local,
        })
    }

    pub fn shard(&self, task_id: usize, client_id: usize) -> Option<&ClientShard> {
        self.shards.get(task_id.checked_sub(1)?)?.get(client_id)
    }
}

impl ClientPool for ShardPool {
    fn n_clients(&self) -> usize {
        self.n_clients
    }

    fn train(&self, client_id: usize, broadcast: &Broadcast, seed: u64) -> fedgtg_server::Result<ClientUpdate> {
        let fail = |message: String| ServerError::Client { client_id, message };
        let shard = self
            .shard(broadcast.task_id, client_id)
            .ok_or_else(|| fail(format!("no shard for task {}", broadcast.task_id)))?;
        let ctx = ClientContext::from_broadcast(client_id, shard, broadcast, self.hp, self.local);
        let outcome = match self.method {
            LocalMethod::FedGtg if broadcast.task_id == 1 => local_train_first_task(&ctx, seed),
            LocalMethod::FedGtg => local_train_incremental(&ctx, seed),
            LocalMethod::FedAvg => local_train_fedavg(&ctx, seed),
            LocalMethod::FedProx { mu } => local_train_fedprox(&ctx, mu, seed),
        }
        .map_err(|e| fail(e.to_string()))?;
        Ok(ClientUpdate {
            client_id,
            model: outcome.model,
            n_samples: shard.len(),
            report: outcome.report,
        })
    }
}

//! Audit manifest for task streams and client shards: class lists and
//! sample index lists, no pixels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{ClientShard, DataError, Result, TaskStream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task_id: usize,
    pub class_ids: Vec<usize>,
    /// Indices into the source dataset's train split.
    pub train_indices: Vec<usize>,
    /// Indices into the source dataset's test split.
    pub test_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub task_id: usize,
    pub client_id: usize,
    /// Indices into the source dataset's train split.
    pub train_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub format_version: u32,
    pub dataset: String,
    pub class_order: Vec<usize>,
    pub tasks: Vec<TaskEntry>,
    #[serde(default)]
    pub shards: Vec<ShardEntry>,
}

impl StreamManifest {
    pub const VERSION: u32 = 1;

    pub fn new(stream: &TaskStream) -> Self {
        Self {
            format_version: Self::VERSION,
            dataset: stream.dataset.clone(),
            class_order: stream.class_order.clone(),
            tasks: stream
                .tasks
                .iter()
                .map(|t| TaskEntry {
                    task_id: t.task_id,
                    class_ids: t.class_ids.clone(),
                    train_indices: t.train.source_indices.clone(),
                    test_indices: t.test.source_indices.clone(),
                })
                .collect(),
            shards: Vec::new(),
        }
    }

    pub fn add_shards(&mut self, shards: &[ClientShard]) {
        self.shards.extend(shards.iter().map(|s| ShardEntry {
            task_id: s.task_id,
            client_id: s.client_id,
            train_indices: s.examples.source_indices.clone(),
        }));
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.format_version != Self::VERSION {
            return Err(DataError::Config(format!(
                "manifest version {} (expected {})",
                m.format_version,
                Self::VERSION
            )));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| DataError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json(&text)
    }
}

//! Accuracy on corrupted copies of every task's test set.

use fedgtg_data::{corrupt_test_set, CorruptionSpec, TaskStream};
use fedgtg_models::ModelState;
use serde::{Deserialize, Serialize};

use crate::{accuracy_on, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionScore {
    pub spec: CorruptionSpec,
    pub label: String,
    /// Accuracy per task, in stream order.
    pub per_task: Vec<f64>,
    /// Mean of `per_task`.
    pub accuracy: f64,
}

/// One score per spec over the first `upto` tasks of `stream`.
pub fn corruption_score(
    model: &ModelState,
    stream: &TaskStream,
    upto: usize,
    specs: &[CorruptionSpec],
) -> Result<Vec<CorruptionScore>> {
    let tasks = &stream.tasks[..upto.min(stream.n_tasks())];
    specs
        .iter()
        .map(|spec| {
            let per_task = tasks
                .iter()
                .map(|task| accuracy_on(model, &corrupt_test_set(task, spec)?.test))
                .collect::<Result<Vec<f64>>>()?;
            Ok(CorruptionScore {
                spec: *spec,
                label: spec.label(),
                accuracy: per_task.iter().sum::<f64>() / per_task.len().max(1) as f64,
                per_task,
            })
        })
        .collect()
}

/// Max-softmax confidences and correctness over every test example of the
/// first `upto` tasks, for calibration.
pub fn confidences(model: &ModelState, stream: &TaskStream, upto: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut conf = Vec::new();
    let mut correct = Vec::new();
    for task in &stream.tasks[..upto.min(stream.n_tasks())] {
        let probs = crate::softmax_rows(&crate::logits_of(model, &task.test)?);
        for (row, &label) in probs.rows().into_iter().zip(&task.test.labels) {
            let j = crate::argmax(row);
            conf.push(row[j].clamp(0.0, 1.0));
            correct.push(model.known_classes[j] == label);
        }
    }
    Ok((conf, correct))
}

//! Accuracy matrix `A[t][s]`: accuracy on task `s` after training task `t`,
//! for `s <= t`. Tasks are 1-based in the API.

use fedgtg_data::{ImageSet, TaskStream};
use fedgtg_models::ModelState;
use serde::{Deserialize, Serialize};

use crate::{predict, MetricError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub n_tasks: usize,
    /// `rows[t - 1]` holds `A[t][1..=t]` once task `t` is evaluated.
    rows: Vec<Option<Vec<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(n_tasks: usize) -> Self {
        Self {
            n_tasks,
            rows: vec![None; n_tasks],
        }
    }

    /// Builds a complete matrix from its lower-triangular rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut a = Self::new(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            a.set_row(i + 1, row)?;
        }
        Ok(a)
    }

    /// Row `t` must have exactly `t` entries in `[0, 1]`.
    pub fn set_row(&mut self, t: usize, row: Vec<f64>) -> Result<()> {
        if t == 0 || t > self.n_tasks {
            return Err(MetricError::Contract(format!("task {t} outside 1..={}", self.n_tasks)));
        }
        if row.len() != t {
            return Err(MetricError::Contract(format!("row {t} needs {t} entries, got {}", row.len())));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MetricError::Contract(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows[t - 1] = Some(row);
        Ok(())
    }

    /// `A[t][s]`, if evaluated.
    pub fn get(&self, t: usize, s: usize) -> Option<f64> {
        if s == 0 || s > t {
            return None;
        }
        self.rows.get(t.checked_sub(1)?)?.as_ref()?.get(s - 1).copied()
    }

    pub fn row(&self, t: usize) -> Option<&[f64]> {
        self.rows.get(t.checked_sub(1)?)?.as_deref()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(Option::is_some)
    }

    /// Populated `(t, s, value)` cells in row-major order.
    pub fn cells(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            if let Some(row) = row {
                out.extend(row.iter().enumerate().map(|(j, &v)| (i + 1, j + 1, v)));
            }
        }
        out
    }

    fn final_row(&self) -> Result<&[f64]> {
        self.row(self.n_tasks)
            .ok_or_else(|| MetricError::Contract("the final row is not populated".into()))
    }
}

/// Fraction of `set` whose argmax over all known classes is the label.
pub fn accuracy_on(model: &ModelState, set: &ImageSet) -> Result<f64> {
    if set.is_empty() {
        return Err(MetricError::Contract("accuracy of an empty set".into()));
    }
    let hits = predict(model, set)?.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / set.len() as f64)
}

/// `A[t][s]` for `s = 1..=t`: test accuracy on each task with no task
/// identity at test time.
pub fn evaluate_task_accuracies(model: &ModelState, stream: &TaskStream, upto: usize) -> Result<Vec<f64>> {
    if upto == 0 || upto > stream.n_tasks() {
        return Err(MetricError::Contract(format!("task {upto} outside 1..={}", stream.n_tasks())));
    }
    let needed = stream.classes_upto(upto);
    if let Some(c) = needed.iter().find(|c| !model.known_classes.contains(c)) {
        return Err(MetricError::Contract(format!("class {c} is unknown to the model")));
    }
    stream.tasks[..upto].iter().map(|task| accuracy_on(model, &task.test)).collect()
}

/// Mean of the final row.
pub fn average_incremental_accuracy(a: &AccuracyMatrix) -> Result<f64> {
    let row = a.final_row()?;
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}

/// `mean_{t < n} (max_{r >= t} A[r][t] - A[n][t])`; undefined for one task.
pub fn average_forgetting(a: &AccuracyMatrix) -> Result<f64> {
    let n = a.n_tasks;
    if n < 2 {
        return Err(MetricError::Undefined("forgetting needs at least two tasks".into()));
    }
    if !a.is_complete() {
        return Err(MetricError::Contract("forgetting needs every row".into()));
    }
    let total: f64 = (1..n)
        .map(|t| {
            let best = (t..=n).map(|r| a.get(r, t).unwrap()).fold(f64::NEG_INFINITY, f64::max);
            best - a.get(n, t).unwrap()
        })
        .sum();
    Ok(total / (n - 1) as f64)
}

/// Mean of each populated row: average accuracy over the tasks seen so far.
pub fn average_accuracy_per_task(a: &AccuracyMatrix) -> Vec<(usize, f64)> {
    (1..=a.n_tasks)
        .filter_map(|t| a.row(t).map(|r| (t, r.iter().sum::<f64>() / r.len() as f64)))
        .collect()
}

//! The flat results table: one row per `(method, dataset, seed, task,
//! metric)`. Plots and comparisons read nothing else.
//!
//! Metric names:
//! - `acc[s]` at task `t`: accuracy on task `s` after training task `t`.
//! - `avg_acc` at task `t`: mean of `acc[1..=t]`.
//! - `aia`, `af`, `ece` at the final task.
//! - `calib_conf[b]`, `calib_acc[b]`, `calib_count[b]` at the final task.
//! - `flatness[sigma]`, `flatness_se[sigma]` at the final task.
//! - `corruption[label]` at the final task.
//! - `confusion[i,j]` at the final task: row-normalized, head order, nonzero
//!   cells only.
//! - `n_clients` at task 0.
//!
//! Seeds are integers, or `mean` and `std` for the summary rows.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{FedError, Result};

pub const MEAN: &str = "mean";
pub const STD: &str = "std";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub dataset: String,
    pub seed: String,
    pub task: usize,
    pub metric: String,
    pub value: f64,
}

impl ResultRow {
    pub fn is_summary(&self) -> bool {
        self.seed == MEAN || self.seed == STD
    }
}

/// Splits `name[arg]` into `("name", Some("arg"))`.
pub fn parse_metric(metric: &str) -> (&str, Option<&str>) {
    match metric.split_once('[') {
        Some((name, rest)) => (name, rest.strip_suffix(']')),
        None => (metric, None),
    }
}

pub fn write_table(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| FedError::format(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| FedError::format(path, e))?;
    }
    w.flush().map_err(|e| FedError::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| FedError::format(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| FedError::format(path, e))).collect()
}

/// Mean and sample standard deviation over seeds of every
/// `(method, dataset, task, metric)` key; one seed gives std 0.
pub fn summarize(rows: &[ResultRow]) -> Vec<ResultRow> {
    let mut groups: BTreeMap<(String, String, usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.is_summary()) {
        groups
            .entry((r.method.clone(), r.dataset.clone(), r.task, r.metric.clone()))
            .or_default()
            .push(r.value);
    }
    let mut out = Vec::with_capacity(2 * groups.len());
    for ((method, dataset, task, metric), values) in groups {
        let (mean, std) = mean_std(&values);
        for (seed, value) in [(MEAN, mean), (STD, std)] {
            out.push(ResultRow {
                method: method.clone(),
                dataset: dataset.clone(),
                seed: seed.into(),
                task,
                metric: metric.clone(),
                value,
            });
        }
    }
    out
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

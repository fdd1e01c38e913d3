//! Side-by-side AIA and AF of finished runs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use crate::results::{mean_std, read_table, ResultRow};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub run: String,
    pub method: String,
    pub dataset: String,
    pub seeds: usize,
    pub aia_mean: f64,
    pub aia_std: f64,
    /// `None` for single-task runs.
    pub af_mean: Option<f64>,
    pub af_std: Option<f64>,
}

fn metric_values(rows: &[ResultRow], metric: &str) -> Vec<f64> {
    rows.iter().filter(|r| !r.is_summary() && r.metric == metric).map(|r| r.value).collect()
}

/// One row per `(run, method, dataset)`, from per-seed rows only.
pub fn compare_rows(runs: &[(String, Vec<ResultRow>)]) -> Vec<ComparisonRow> {
    let mut out = Vec::new();
    for (run, rows) in runs {
        let mut groups: BTreeMap<(&str, &str), Vec<ResultRow>> = BTreeMap::new();
        for r in rows {
            groups.entry((&r.method, &r.dataset)).or_default().push(r.clone());
        }
        for ((method, dataset), rs) in groups {
            let aia = metric_values(&rs, "aia");
            if aia.is_empty() {
                continue;
            }
            let af = metric_values(&rs, "af");
            let (aia_mean, aia_std) = mean_std(&aia);
            let (af_mean, af_std) = if af.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&af);
                (Some(m), Some(s))
            };
            out.push(ComparisonRow {
                run: run.clone(),
                method: method.into(),
                dataset: dataset.into(),
                seeds: aia.len(),
                aia_mean,
                aia_std,
                af_mean,
                af_std,
            });
        }
    }
    out
}

/// Reads `results.csv` from each run directory.
pub fn compare(run_dirs: &[PathBuf]) -> Result<Vec<ComparisonRow>> {
    let runs = run_dirs
        .iter()
        .map(|d| {
            let name = d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned());
            Ok((name, read_table(&d.join("results.csv"))?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(compare_rows(&runs))
}

/// Fixed-width text table in percentage points.
pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let pp = |m: f64, s: f64| format!("{:6.2} ± {:5.2}", 100.0 * m, 100.0 * s);
    let mut out = format!("{:<32} {:<20} {:<14} {:>5}  {:>15}  {:>15}\n", "run", "method", "dataset", "seeds", "AIA (%)", "AF (%)");
    for r in rows {
        let af = match (r.af_mean, r.af_std) {
            (Some(m), Some(s)) => pp(m, s),
            _ => "n/a".into(),
        };
        out.push_str(&format!(
            "{:<32} {:<20} {:<14} {:>5}  {:>15}  {:>15}\n",
            r.run,
            r.method,
            r.dataset,
            r.seeds,
            pp(r.aia_mean, r.aia_std),
            af
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::results::summarize;

    fn row(method: &str, seed: u64, metric: &str, value: f64) -> ResultRow {
        ResultRow {
            method: method.into(),
            dataset: "synthetic".into(),
            seed: seed.to_string(),
            task: 3,
            metric: metric.into(),
            value,
        }
    }

    #[test]
    fn tabulates_per_method_and_ignores_summary_rows() {
        let mut a = vec![row("fedgtg", 0, "aia", 0.6), row("fedgtg", 1, "aia", 0.8), row("fedgtg", 0, "af", 0.1), row("fedgtg", 1, "af", 0.1)];
        a.extend(summarize(&a));
        let b = vec![row("fedavg", 0, "aia", 0.3)];
        let rows = compare_rows(&[("a".into(), a), ("b".into(), b)]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].seeds, 2);
        assert!((rows[0].aia_mean - 0.7).abs() < 1e-12);
        assert_eq!(rows[0].af_mean, Some(0.1));
        assert_eq!(rows[1].af_mean, None);
        let text = format_comparison(&rows);
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains(" 70.00"));
    }
}

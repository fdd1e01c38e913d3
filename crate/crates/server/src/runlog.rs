//! Line-delimited JSON run log: one `{"kind": .., "record": ..}` per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::Result;

pub struct RunLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunLog {
    /// Opens `path` for appending, creating parent directories.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one record and flushes, so a crash loses at most the current line.
    pub fn append<T: Serialize>(&mut self, kind: &str, record: &T) -> Result<()> {
        let line = serde_json::json!({ "kind": kind, "record": record });
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

/// All records of one kind, in file order.
pub fn read_records(path: &Path, kind: &str) -> Result<Vec<serde_json::Value>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        if value["kind"] == kind {
            out.push(value["record"].take());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RoundReport;

    #[test]
    fn records_round_trip_by_kind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logs/run.jsonl");
        let report = RoundReport {
            task_id: 1,
            round_id: 0,
            selected_clients: vec![0, 2],
            aggregate_weights: vec![0.25, 0.75],
            global_eval_accuracy: Some(0.5),
        };
        {
            let mut log = RunLog::open(&path).unwrap();
            log.append("round", &report).unwrap();
            log.append("note", &"hello").unwrap();
            log.append("round", &report).unwrap();
        }
        let rounds = read_records(&path, "round").unwrap();
        assert_eq!(rounds.len(), 2);
        let back: RoundReport = serde_json::from_value(rounds[0].clone()).unwrap();
        assert_eq!(back, report);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
    }
}

//! The full pipeline for every seed of a config, and the run directory it
//! leaves behind.
//!
//! ```text
//! <output_dir>/<name>-<method>-<NNN>/
//!   config.toml          snapshot of the validated config
//!   results.csv          per-seed rows, then mean/std rows
//!   manifest.json
//!   logs/seed-<s>.jsonl  round, client and generator records
//!   checkpoints/seed-<s>/task-<t>.json
//!   confusion/seed-<s>.json
//!   diagnostics/seed-<s>.txt   only for failed seeds
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fedgtg_client::ShardPool;
use fedgtg_data::{build_task_stream, load_dataset, partition_lda, Dataset, ImageSet, LoadOptions, TaskStream};
use fedgtg_metrics::{
    average_forgetting, average_incremental_accuracy, confidences, confusion_matrix, corruption_score,
    evaluate_task_accuracies, expected_calibration_error, flatness_probe, AccuracyMatrix, ConfusionMatrix,
    ModelLandscape,
};
use fedgtg_models::{checkpoint, derive_seed, ModelState};
use fedgtg_server::{run_task, RunLog, ServerState};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::results::{summarize, ResultRow};
use crate::{ExperimentConfig, FedError, Result};

pub const CODE_VERSION: &str = concat!("fedgtg ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub seed: u64,
    pub task: usize,
    /// Relative to the run directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStatus {
    pub seed: u64,
    pub ok: bool,
    /// Relative path of the diagnostic file when the seed failed.
    pub diagnostic: Option<PathBuf>,
    pub wall_clock_seconds: f64,
}

/// Everything a finished run produced. Paths are relative to `run_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub config: ExperimentConfig,
    pub code_version: String,
    pub results_table: PathBuf,
    pub config_snapshot: PathBuf,
    pub logs: Vec<PathBuf>,
    pub checkpoints: Vec<CheckpointEntry>,
    pub confusion: Vec<PathBuf>,
    pub seeds: Vec<SeedStatus>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn failed_seeds(&self) -> Vec<u64> {
        self.seeds.iter().filter(|s| !s.ok).map(|s| s.seed).collect()
    }

    /// Every path the manifest refers to, relative to `run_dir`.
    pub fn artifacts(&self) -> Vec<PathBuf> {
        let mut out = vec![self.results_table.clone(), self.config_snapshot.clone()];
        out.extend(self.logs.iter().cloned());
        out.extend(self.checkpoints.iter().map(|c| c.path.clone()));
        out.extend(self.confusion.iter().cloned());
        out.extend(self.seeds.iter().filter_map(|s| s.diagnostic.clone()));
        out
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| FedError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| FedError::format(&path, e))
    }
}

/// Loads, subsets and normalizes the configured dataset.
pub fn prepare_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let opts = LoadOptions {
        data_dir: cfg.resolved_data_dir(),
        synthetic: cfg.synthetic.clone(),
    };
    let mut ds = load_dataset(&cfg.dataset, &opts)?;
    if let Some(k) = cfg.classes {
        ds = ds.first_classes(k)?;
    }
    Ok(if cfg.normalize { ds.normalized() } else { ds })
}

/// Metric rows and artifacts of one seed.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub rows: Vec<ResultRow>,
    pub accuracy: AccuracyMatrix,
    pub final_model: ModelState,
    pub confusion: Option<ConfusionMatrix>,
    pub checkpoints: Vec<CheckpointEntry>,
}

struct RowSink<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    rows: Vec<ResultRow>,
}

impl RowSink<'_> {
    fn push(&mut self, task: usize, metric: impl Into<String>, value: f64) {
        self.rows.push(ResultRow {
            method: self.cfg.method.to_string(),
            dataset: self.cfg.dataset.clone(),
            seed: self.seed.to_string(),
            task,
            metric: metric.into(),
            value,
        });
    }
}

/// Evenly strided subset of at most `k` examples; `k = 0` keeps all.
fn strided(set: &ImageSet, k: usize) -> ImageSet {
    if k == 0 || set.len() <= k {
        return set.clone();
    }
    let positions: Vec<usize> = (0..k).map(|i| i * set.len() / k).collect();
    set.subset(&positions)
}

/// Trains every task of one seed and evaluates the final model. With a
/// run directory, writes checkpoints and the per-seed log there.
pub fn run_seed(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64, run_dir: Option<&Path>) -> Result<SeedResult> {
    let stream = build_task_stream(dataset, cfg.n_tasks, seed)?;
    let shards = stream
        .tasks
        .iter()
        .map(|task| partition_lda(task, cfg.n_clients, cfg.lda_alpha, derive_seed(seed, &format!("partition.{}", task.task_id))))
        .collect::<fedgtg_data::Result<Vec<_>>>()?;
    let pool = ShardPool::new(shards, cfg.local_method(), cfg.effective_hyperparams(), cfg.local_config())?;
    let server = cfg.server_config(seed);
    let mut log = match run_dir {
        Some(dir) => Some(RunLog::open(&dir.join("logs").join(format!("seed-{seed}.jsonl")))?),
        None => None,
    };
    let global = ModelState::init_backbone(&cfg.arch, &stream.tasks[0].class_ids, derive_seed(seed, "model.init"))?;
    let mut state = ServerState { global, previous: None };
    let n = stream.n_tasks();
    let mut accuracy = AccuracyMatrix::new(n);
    let mut sink = RowSink {
        cfg,
        seed,
        rows: Vec::new(),
    };
    sink.push(0, "n_clients", cfg.n_clients as f64);
    let mut checkpoints = Vec::new();
    for task in &stream.tasks {
        let t = task.task_id;
        let make_bundle = cfg.method.uses_generators() && t < n;
        let outcome = run_task(&pool, t, &task.class_ids, state, &server, make_bundle, None, log.as_mut())?;
        state = outcome.state;
        let row = evaluate_task_accuracies(&state.global, &stream, t)?;
        for (s, &a) in row.iter().enumerate() {
            sink.push(t, format!("acc[{}]", s + 1), a);
        }
        sink.push(t, "avg_acc", row.iter().sum::<f64>() / row.len() as f64);
        info!("seed {seed} task {t}: accuracies {row:.3?}");
        if let Some(log) = log.as_mut() {
            if !outcome.data_gen_losses.is_empty() {
                log.append(
                    "generators",
                    &serde_json::json!({
                        "task": t,
                        "data_generator": outcome.data_gen_losses,
                        "feature_generator": outcome.feat_gen_losses,
                    }),
                )?;
            }
            log.append("task_accuracy", &serde_json::json!({ "task": t, "accuracies": row }))?;
        }
        accuracy.set_row(t, row)?;
        if let (Some(dir), true) = (run_dir, cfg.checkpoints) {
            let rel = PathBuf::from("checkpoints").join(format!("seed-{seed}")).join(format!("task-{t}.json"));
            checkpoint::save(&state.global, &dir.join(&rel))?;
            checkpoints.push(CheckpointEntry { seed, task: t, path: rel });
        }
    }
    let confusion = evaluate_final(cfg, &stream, &state.global, &accuracy, &mut sink)?;
    Ok(SeedResult {
        seed,
        rows: sink.rows,
        accuracy,
        final_model: state.global,
        confusion,
        checkpoints,
    })
}

fn evaluate_final(
    cfg: &ExperimentConfig,
    stream: &TaskStream,
    model: &ModelState,
    accuracy: &AccuracyMatrix,
    sink: &mut RowSink<'_>,
) -> Result<Option<ConfusionMatrix>> {
    let n = stream.n_tasks();
    sink.push(n, "aia", average_incremental_accuracy(accuracy)?);
    if n > 1 {
        sink.push(n, "af", average_forgetting(accuracy)?);
    }
    let (conf, correct) = confidences(model, stream, n)?;
    let calib = expected_calibration_error(&conf, &correct, cfg.eval.ece_bins)?;
    sink.push(n, "ece", calib.ece);
    for b in 0..cfg.eval.ece_bins {
        sink.push(n, format!("calib_conf[{b}]"), calib.confidence[b]);
        sink.push(n, format!("calib_acc[{b}]"), calib.accuracy[b]);
        sink.push(n, format!("calib_count[{b}]"), calib.count[b] as f64);
    }
    if !cfg.eval.flatness_sigmas.is_empty() {
        let subsets: Vec<ImageSet> = stream.tasks.iter().map(|t| strided(&t.train, cfg.eval.flatness_max_per_task)).collect();
        let landscape = ModelLandscape {
            model,
            sets: subsets.iter().collect(),
        };
        let curve = flatness_probe(
            &landscape,
            &cfg.eval.flatness_sigmas,
            cfg.eval.flatness_trials,
            derive_seed(sink.seed, "flatness"),
        )?;
        for p in curve {
            sink.push(n, format!("flatness[{}]", p.sigma), p.mean_loss);
            sink.push(n, format!("flatness_se[{}]", p.sigma), p.std_error);
        }
    }
    for score in corruption_score(model, stream, n, &cfg.eval.corruptions)? {
        sink.push(n, format!("corruption[{}]", score.label), score.accuracy);
    }
    if !cfg.eval.confusion {
        return Ok(None);
    }
    let m = confusion_matrix(model, stream)?;
    let norm = m.normalized();
    for ((i, j), &v) in norm.indexed_iter() {
        if v > 0.0 {
            sink.push(n, format!("confusion[{i},{j}]"), v);
        }
    }
    Ok(Some(m))
}

/// Creates `<output_dir>/<label>-<NNN>` with the first free counter.
fn fresh_run_dir(cfg: &ExperimentConfig) -> Result<(String, PathBuf)> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| FedError::io(&cfg.output_dir, e))?;
    let label = format!("{}-{}", cfg.name.as_deref().unwrap_or(&cfg.dataset), cfg.method)
        .replace(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '_'), "-");
    for i in 1.. {
        let id = format!("{label}-{i:03}");
        let dir = cfg.output_dir.join(&id);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((id, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(FedError::io(&dir, e)),
        }
    }
    unreachable!()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| FedError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| FedError::io(path, e))
}

/// Runs every seed into a fresh run directory under `output_dir`. A failing
/// seed leaves a diagnostic and the remaining seeds still run; check
/// [`RunManifest::failed_seeds`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let (run_id, run_dir) = fresh_run_dir(cfg)?;
    run_experiment_in(cfg, run_id, &run_dir)
}

/// Same as [`run_experiment`] into an existing, empty directory.
pub fn run_experiment_in(cfg: &ExperimentConfig, run_id: String, run_dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let start = Instant::now();
    let config_snapshot = PathBuf::from("config.toml");
    write_text(&run_dir.join(&config_snapshot), &cfg.to_toml())?;
    let dataset = prepare_dataset(cfg)?;
    info!("run {run_id}: {} on {} ({} seeds)", cfg.method, dataset.name, cfg.seeds.len());

    let one = |seed: u64| {
        let t0 = Instant::now();
        let result = run_seed(cfg, &dataset, seed, Some(run_dir));
        (seed, result, t0.elapsed().as_secs_f64())
    };
    let outcomes: Vec<_> = if cfg.parallel_seeds {
        cfg.seeds.par_iter().map(|&s| one(s)).collect()
    } else {
        cfg.seeds.iter().map(|&s| one(s)).collect()
    };

    let results_table = PathBuf::from("results.csv");
    let mut writer = csv::Writer::from_path(run_dir.join(&results_table)).map_err(|e| FedError::format(run_dir, e))?;
    let mut all_rows = Vec::new();
    let mut manifest = RunManifest {
        run_id,
        run_dir: run_dir.to_path_buf(),
        config: cfg.clone(),
        code_version: CODE_VERSION.into(),
        results_table: results_table.clone(),
        config_snapshot,
        logs: Vec::new(),
        checkpoints: Vec::new(),
        confusion: Vec::new(),
        seeds: Vec::new(),
        wall_clock_seconds: 0.0,
    };
    for (seed, result, secs) in outcomes {
        let log = PathBuf::from("logs").join(format!("seed-{seed}.jsonl"));
        if run_dir.join(&log).exists() {
            manifest.logs.push(log);
        }
        match result {
            Ok(r) => {
                for row in &r.rows {
                    writer.serialize(row).map_err(|e| FedError::format(&results_table, e))?;
                }
                writer.flush().map_err(|e| FedError::io(&results_table, e))?;
                all_rows.extend(r.rows);
                manifest.checkpoints.extend(r.checkpoints);
                if let Some(m) = &r.confusion {
                    let rel = PathBuf::from("confusion").join(format!("seed-{seed}.json"));
                    write_text(&run_dir.join(&rel), &serde_json::to_string(m).expect("confusion serializes"))?;
                    manifest.confusion.push(rel);
                }
                manifest.seeds.push(SeedStatus {
                    seed,
                    ok: true,
                    diagnostic: None,
                    wall_clock_seconds: secs,
                });
            }
            Err(e) => {
                warn!("seed {seed} failed: {e}");
                let rel = PathBuf::from("diagnostics").join(format!("seed-{seed}.txt"));
                write_text(&run_dir.join(&rel), &format!("seed {seed} failed after {secs:.1}s\n{e}\n{e:?}\n"))?;
                manifest.seeds.push(SeedStatus {
                    seed,
                    ok: false,
                    diagnostic: Some(rel),
                    wall_clock_seconds: secs,
                });
            }
        }
    }
    for row in summarize(&all_rows) {
        writer.serialize(&row).map_err(|e| FedError::format(&results_table, e))?;
    }
    writer.flush().map_err(|e| FedError::io(&results_table, e))?;
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    write_text(
        &run_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}

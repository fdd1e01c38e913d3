//! End-to-end runs on a tiny synthetic config.

mod common;

use std::collections::BTreeSet;

use fedgtg::{emit_plots, read_table, run_experiment, validate_config, PlotKind, RunManifest};

#[test]
fn run_leaves_every_referenced_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = validate_config(&common::tiny_config(dir.path(), "fedgtg")).unwrap();
    let manifest = run_experiment(&cfg).unwrap();
    assert!(manifest.failed_seeds().is_empty());
    for rel in manifest.artifacts() {
        assert!(manifest.run_dir.join(&rel).exists(), "{}", rel.display());
    }
    assert_eq!(manifest.checkpoints.len(), 4);
    assert_eq!(RunManifest::load(&manifest.run_dir).unwrap(), manifest);

    let rows = read_table(&manifest.run_dir.join("results.csv")).unwrap();
    let seeds: BTreeSet<&str> = rows.iter().map(|r| r.seed.as_str()).collect();
    assert_eq!(seeds, BTreeSet::from(["0", "1", "mean", "std"]));
    for metric in ["aia", "af", "ece", "acc[1]", "avg_acc", "flatness[0]", "corruption[contrast-5]", "n_clients"] {
        assert!(rows.iter().any(|r| r.metric == metric && r.seed == "mean"), "{metric}");
    }
    assert!(rows.iter().all(|r| r.method == "fedgtg" && r.dataset == "synthetic"));

    // Generators are trained after every task but the last.
    let log = manifest.run_dir.join("logs/seed-0.jsonl");
    let gens = fedgtg::server::read_records(&log, "generators").unwrap();
    assert_eq!(gens.len(), 1);
    assert_eq!(gens[0]["data_generator"].as_array().unwrap().len(), cfg.generator_budget.steps);
    assert_eq!(fedgtg::server::read_records(&log, "task_accuracy").unwrap().len(), 2);

    let report = emit_plots(&rows, &PlotKind::ALL, &manifest.run_dir.join("plots")).unwrap();
    assert_eq!(report.written.len(), PlotKind::ALL.len(), "{:?}", report.warnings);
}

#[test]
fn reruns_get_new_ids_and_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = validate_config(&common::tiny_config(dir.path(), "fedavg")).unwrap();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_ne!(a.run_id, b.run_id);
    let read = |m: &RunManifest| std::fs::read(m.run_dir.join("results.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn parallel_clients_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = validate_config(&common::tiny_config(dir.path(), "fedgtg")).unwrap();
    cfg.seeds = vec![3];
    let a = run_experiment(&cfg).unwrap();
    cfg.parallel_clients = true;
    cfg.parallel_seeds = true;
    let b = run_experiment(&cfg).unwrap();
    let read = |m: &RunManifest| std::fs::read(m.run_dir.join("results.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn every_seed_is_attempted_and_failures_leave_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = validate_config(&common::tiny_config(dir.path(), "fedavg")).unwrap();
    // Steps this large overflow the weights within a couple of batches.
    cfg.lr = 1e300;
    let manifest = run_experiment(&cfg).unwrap();
    assert_eq!(manifest.failed_seeds(), vec![0, 1]);
    for s in &manifest.seeds {
        let text = std::fs::read_to_string(manifest.run_dir.join(s.diagnostic.as_ref().unwrap())).unwrap();
        assert!(text.contains(&format!("seed {}", s.seed)));
    }
}

#[test]
fn ablation_zeroes_only_its_weight() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = validate_config(&common::tiny_config(dir.path(), "ablation:L_EFM")).unwrap();
    let hp = cfg.effective_hyperparams();
    assert_eq!(hp.lambda_efm, 0.0);
    assert_eq!(hp.lambda_logits, cfg.hyperparams.lambda_logits);
    let manifest = run_experiment(&cfg).unwrap();
    let rows = read_table(&manifest.run_dir.join("results.csv")).unwrap();
    assert!(rows.iter().all(|r| r.method == "ablation:L_EFM"));
}

//! Runs the smoke config into a temporary directory and renders every plot
//! from its results table.
//!
//! `cargo run -p fedgtg --release --example plots [out_dir]`

use std::path::{Path, PathBuf};

use fedgtg::config::load_config;
use fedgtg::plot::{emit_plots, PlotKind};
use fedgtg::results::read_table;
use fedgtg::run::run_experiment;

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let mut cfg = load_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smoke.toml")).unwrap();
    cfg.output_dir = scratch.path().to_path_buf();
    let manifest = run_experiment(&cfg).unwrap();
    let rows = read_table(&manifest.run_dir.join(&manifest.results_table)).unwrap();

    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| manifest.run_dir.join("plots"));
    let report = emit_plots(&rows, &PlotKind::ALL, &out).unwrap();
    for path in &report.written {
        println!("wrote {}", path.display());
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
}

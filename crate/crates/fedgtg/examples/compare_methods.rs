//! Runs the smoke config once per method and prints the comparison table.
//!
//! `cargo run -p fedgtg --release --example compare_methods`

use std::path::Path;

use fedgtg::compare::{compare, format_comparison};
use fedgtg::config::{load_config, LossTerm, Method};
use fedgtg::run::run_experiment;

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let base = load_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smoke.toml")).unwrap();
    let methods = [Method::FedGtg, Method::FedAvg, Method::FedProx, Method::Ablation(LossTerm::Efm)];
    let mut dirs = Vec::new();
    for method in methods {
        let mut cfg = base.clone();
        cfg.method = method;
        cfg.output_dir = scratch.path().to_path_buf();
        dirs.push(run_experiment(&cfg).unwrap().run_dir);
    }
    print!("{}", format_comparison(&compare(&dirs).unwrap()));
}

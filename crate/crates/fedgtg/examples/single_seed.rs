//! Runs one seed of the smoke config in memory and prints the accuracy
//! matrix with its summary metrics.
//!
//! `cargo run -p fedgtg --release --example single_seed [fedgtg|fedavg|fedprox|ablation:L_EFM]`

use std::path::Path;

use fedgtg::config::{load_config, Method};
use fedgtg::metrics::{average_forgetting, average_incremental_accuracy};
use fedgtg::run::{prepare_dataset, run_seed};

fn main() {
    let mut cfg = load_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smoke.toml")).unwrap();
    if let Some(m) = std::env::args().nth(1) {
        cfg.method = Method::try_from(m).unwrap();
    }
    let dataset = prepare_dataset(&cfg).unwrap();
    let result = run_seed(&cfg, &dataset, 0, None).unwrap();
    println!("{} on {}, seed {}", cfg.method, dataset.name, result.seed);
    for t in 1..=cfg.n_tasks {
        let row = result.accuracy.row(t).unwrap();
        let cells: Vec<String> = row.iter().map(|a| format!("{:5.1}", 100.0 * a)).collect();
        println!("after task {t}: {}", cells.join(" "));
    }
    println!(
        "AIA {:.1}%  AF {:.1}%  ({} table rows)",
        100.0 * average_incremental_accuracy(&result.accuracy).unwrap(),
        100.0 * average_forgetting(&result.accuracy).unwrap(),
        result.rows.len()
    );
}

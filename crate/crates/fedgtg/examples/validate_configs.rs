//! Loads every shipped config and prints what it resolves to.
//!
//! `cargo run -p fedgtg --example validate_configs`

use std::path::Path;

use fedgtg::config::{load_config, preset, validate_config, PRESETS};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .expect("configs directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    paths.sort();
    for path in &paths {
        match load_config(path) {
            Ok(cfg) => println!(
                "{:<22} {:<18} {:>3} classes / {:>2} tasks, {:>2} clients, {} seeds",
                path.file_name().unwrap().to_string_lossy(),
                cfg.method.to_string(),
                cfg.n_classes(),
                cfg.n_tasks,
                cfg.n_clients,
                cfg.seeds.len()
            ),
            Err(e) => println!("{}: {e}", path.display()),
        }
    }

    println!("\npresets: {}", PRESETS.join(", "));
    let toy = preset("toy-synthetic").unwrap();
    println!("toy loss weights: {:?}", toy.effective_hyperparams());

    // Every violation is reported with its key path, not just the first.
    let bad = "preset = \"toy-synthetic\"\nn_tasks = 4\nparticipation_rate = 0.0\nlr = -1.0\n";
    if let Err(e) = validate_config(bad) {
        println!("\nrejected override:\n{e}");
    }
}

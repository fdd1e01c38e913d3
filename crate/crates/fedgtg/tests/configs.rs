//! Every shipped config file must validate.

use std::path::Path;

use fedgtg::config::{load_config, Method};

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(!cfg.seeds.is_empty());
            seen += 1;
        }
    }
    assert!(seen >= 5, "only {seen} configs found");
}

#[test]
fn toy_variants_differ_only_in_method() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let base = load_config(&dir.join("toy.toml")).unwrap();
    assert_eq!(base.method, Method::FedGtg);
    for name in ["toy-fedavg.toml", "toy-no-logits.toml", "toy-no-efm.toml"] {
        let mut other = load_config(&dir.join(name)).unwrap();
        assert_ne!(other.method, base.method, "{name}");
        other.method = base.method;
        assert_eq!(other, base, "{name}");
    }
}

//! The server must not be able to reach client shards.

use std::collections::BTreeSet;

use fedgtg_models::{ArchConfig, GeneratorConfig, ModelState};
use fedgtg_server::{compute_efm, Broadcast, GeneratorBudget, PreviousTaskBundle};

#[test]
fn manifest_has_no_data_dependency() {
    let manifest = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/Cargo.toml")).unwrap();
    let deps: Vec<&str> = manifest
        .lines()
        .map(str::trim)
        .filter(|l| !l.starts_with('#'))
        .filter(|l| l.starts_with("fedgtg-"))
        .collect();
    assert!(!deps.is_empty());
    assert!(deps.iter().all(|l| !l.starts_with("fedgtg-data")), "{deps:?}");
}

#[test]
fn broadcast_carries_only_weights_generators_and_matrix() {
    let arch = ArchConfig::small_cnn([3, 8, 8], vec![2], 4);
    let prev = ModelState::init_backbone(&arch, &[0, 1], 0).unwrap();
    let gen_cfg = GeneratorConfig {
        noise_dim: Some(4),
        base_channels: 4,
        hidden: 8,
        ..Default::default()
    };
    let budget = GeneratorBudget {
        steps: 1,
        batch_size: 4,
        lr: 1e-3,
    };
    let hp = Default::default();
    let data = fedgtg_server::train_data_generator(&prev, &gen_cfg, &budget, &hp, 2, 0).unwrap();
    let feat = fedgtg_server::train_feature_generator(&prev, &gen_cfg, &budget, &hp, 2, 0).unwrap();
    let efm = compute_efm(&feat.generator, &prev, 4, 1, 0).unwrap();
    let b = Broadcast {
        task_id: 2,
        round_id: 0,
        global: prev.extend_head(&[2, 3]).unwrap(),
        current_classes: vec![2, 3],
        previous: Some(PreviousTaskBundle {
            prev_global: prev,
            data_gen: data.generator,
            feat_gen: feat.generator,
            efm,
        }),
    };
    let json = serde_json::to_value(&b).unwrap();
    let keys = |v: &serde_json::Value| v.as_object().unwrap().keys().cloned().collect::<BTreeSet<_>>();
    let expected = |ks: &[&str]| ks.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    assert_eq!(keys(&json), expected(&["task_id", "round_id", "global", "current_classes", "previous"]));
    assert_eq!(
        keys(&json["previous"]),
        expected(&["prev_global", "data_gen", "feat_gen", "efm"])
    );
}

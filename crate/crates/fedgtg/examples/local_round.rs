//! One client's local training on a later task: masked cross-entropy plus
//! replay from the previous task's generators and the feature-matrix drift
//! penalty. Prints the per-epoch loss terms.
//!
//! `cargo run -p fedgtg --example local_round`

use fedgtg::client::{local_train_incremental, ClientContext, LocalConfig};
use fedgtg::data::{build_task_stream, partition_lda, SyntheticSpec};
use fedgtg::losses::HyperParams;
use fedgtg::models::{ArchConfig, GeneratorConfig, GeneratorState, ModelState};
use fedgtg::server::{compute_efm, PreviousTaskBundle};

fn main() {
    let dataset = SyntheticSpec {
        n_classes: 4,
        image_size: 8,
        train_per_class: 40,
        test_per_class: 10,
        ..Default::default()
    }
    .generate()
    .normalized();
    let stream = build_task_stream(&dataset, 2, 0).unwrap();
    let task = &stream.tasks[1];
    let shard = partition_lda(task, 2, 1.0, 5).unwrap().remove(0);

    // Untrained artifacts stand in for the server's end-of-task output.
    let arch = ArchConfig::small_cnn([3, 8, 8], vec![4], 8);
    let prev = ModelState::init_backbone(&arch, &stream.tasks[0].class_ids, 0).unwrap();
    let gen_cfg = GeneratorConfig {
        base_channels: 4,
        hidden: 16,
        ..Default::default()
    };
    let data_gen = GeneratorState::init_data_generator(&gen_cfg, &prev, 1).unwrap();
    let feat_gen = GeneratorState::init_feature_generator(&gen_cfg, &prev, 2).unwrap();
    let efm = compute_efm(&feat_gen, &prev, 64, 1, 3).unwrap();
    let bundle = PreviousTaskBundle {
        prev_global: prev.clone(),
        data_gen,
        feat_gen,
        efm,
    };

    let ctx = ClientContext {
        client_id: shard.client_id,
        task_id: task.task_id,
        round_id: 0,
        shard: &shard,
        current_model: prev.extend_head(&task.class_ids).unwrap(),
        current_classes: task.class_ids.clone(),
        previous: Some(&bundle),
        hp: HyperParams::cifar(),
        local: LocalConfig {
            epochs: 3,
            batch_size: 16,
            synthetic_batch_size: 16,
            lr: 0.05,
            weight_decay: 0.0,
        },
    };
    let out = local_train_incremental(&ctx, 42).unwrap();
    println!("client {} trained on {} samples", out.report.client_id, out.report.n_samples);
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for e in &out.report.epochs {
        println!(
            "epoch {}: total {:.4}  ce {:.4}  logits {}  ft {}  efm {}",
            e.epoch,
            e.total,
            e.ce,
            opt(e.logits),
            opt(e.ft),
            opt(e.efm)
        );
    }
    assert_eq!(bundle.prev_global.digest(), prev.digest());
}

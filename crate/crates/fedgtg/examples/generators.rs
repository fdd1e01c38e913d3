//! Fits a small classifier, then trains the server's data and feature
//! generators against it and estimates the feature matrix.
//!
//! `cargo run -p fedgtg --release --example generators`

use fedgtg::autograd::{Graph, Sgd};
use fedgtg::data::{build_task_stream, SyntheticSpec};
use fedgtg::losses::HyperParams;
use fedgtg::models::{ArchConfig, GeneratorConfig, Mode, ModelState, Trace, Trainable};
use fedgtg::server::{compute_efm, teacher_agreement, train_data_generator, train_feature_generator, GeneratorBudget};

fn main() {
    let dataset = SyntheticSpec {
        n_classes: 4,
        image_size: 8,
        train_per_class: 60,
        test_per_class: 10,
        ..Default::default()
    }
    .generate()
    .normalized();
    let stream = build_task_stream(&dataset, 2, 0).unwrap();
    let classes = stream.classes_upto(2);
    let train = stream.tasks[0].train.concat(&stream.tasks[1].train);

    let arch = ArchConfig::small_cnn([3, 8, 8], vec![8], 16);
    let mut teacher = ModelState::init_backbone(&arch, &classes, 1).unwrap();
    let x = train.all_f64();
    let y = teacher.head_positions(&train.labels).unwrap();
    let opt = Sgd::new(0.1, 0.0);
    for _ in 0..80 {
        let g = Graph::new();
        let b = teacher.bind(&g, Trainable::All);
        let mut trace = Trace::new();
        let f = teacher.features(&b, g.constant(x.clone().into_dyn()), Mode::Train, &mut trace);
        let loss = teacher.head(&b, f).log_softmax().pick(&y).mean().scale(-1.0);
        let grads = b.gradients(&g.backward(loss));
        teacher.sgd_step(&opt, &grads);
        teacher.absorb(&trace);
    }

    let cfg = GeneratorConfig {
        base_channels: 8,
        hidden: 32,
        ..Default::default()
    };
    let budget = GeneratorBudget {
        steps: 150,
        batch_size: 32,
        lr: 1e-2,
    };
    let hp = HyperParams::cifar();
    let before = teacher.digest();
    let data = train_data_generator(&teacher, &cfg, &budget, &hp, 2, 3).unwrap();
    let feat = train_feature_generator(&teacher, &cfg, &budget, &hp, 2, 3).unwrap();
    assert_eq!(teacher.digest(), before, "generator training must not touch the teacher");

    let first = |l: &[f64]| l.first().copied().unwrap_or(f64::NAN);
    let last = |l: &[f64]| l.last().copied().unwrap_or(f64::NAN);
    println!(
        "data generator loss {:.3} -> {:.3}, teacher agreement {:.1}%",
        first(&data.losses),
        last(&data.losses),
        100.0 * teacher_agreement(&data.generator, 512, 9).unwrap()
    );
    println!(
        "feature generator loss {:.3} -> {:.3}, teacher agreement {:.1}%",
        first(&feat.losses),
        last(&feat.losses),
        100.0 * teacher_agreement(&feat.generator, 512, 9).unwrap()
    );

    let efm = compute_efm(&feat.generator, &teacher, 512, 2, 11).unwrap();
    let trace: f64 = efm.matrix.diag().sum();
    println!("feature matrix {0}x{0}: trace {trace:.4}, smallest eigenvalue {1:.2e}", efm.dim(), efm.min_eigenvalue());
}

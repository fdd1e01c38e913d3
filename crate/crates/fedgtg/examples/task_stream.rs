//! Builds a class-incremental stream from the synthetic dataset, splits each
//! task across clients with Dirichlet label skew, and corrupts a test set.
//!
//! `cargo run -p fedgtg --example task_stream`

use fedgtg::data::{build_task_stream, corrupt_test_set, partition_lda, CorruptionKind, CorruptionSpec, SyntheticSpec};

fn main() {
    let dataset = SyntheticSpec {
        n_classes: 6,
        image_size: 16,
        train_per_class: 100,
        test_per_class: 20,
        ..Default::default()
    }
    .generate()
    .normalized();
    let stream = build_task_stream(&dataset, 3, 0).unwrap();
    println!("class order {:?}", stream.class_order);
    for task in &stream.tasks {
        println!("task {}: classes {:?}, {} train / {} test", task.task_id, task.class_ids, task.train.len(), task.test.len());
    }

    let task = &stream.tasks[0];
    for alpha in [0.1, 1.0, 100.0] {
        let shards = partition_lda(task, 8, alpha, 7).unwrap();
        let sizes: Vec<String> = shards
            .iter()
            .map(|s| {
                let per_class: Vec<usize> =
                    task.class_ids.iter().map(|c| s.examples.labels.iter().filter(|l| *l == c).count()).collect();
                format!("{per_class:?}")
            })
            .collect();
        println!("alpha {alpha:>5}: {}", sizes.join(" "));
    }

    let clean = task.test.all_f64();
    for kind in CorruptionKind::ALL {
        let spec = CorruptionSpec::new(kind, 5).unwrap();
        let corrupted = corrupt_test_set(task, &spec).unwrap().test.all_f64();
        let rms = ((&corrupted - &clean).mapv(|v| v * v).mean().unwrap()).sqrt();
        println!("{kind:?} severity 5: rms pixel change {rms:.3}");
    }
}

//! Metrics evaluated on real classifiers over a small synthetic stream.

use fedgtg_autograd::{Graph, Sgd};
use fedgtg_data::{build_task_stream, CorruptionKind, CorruptionSpec, SyntheticSpec, TaskStream};
use fedgtg_metrics::{
    accuracy_on, confidences, confusion_matrix, corruption_score, evaluate_task_accuracies,
    expected_calibration_error, flatness_probe, MetricError, ModelLandscape, DEFAULT_BINS,
};
use fedgtg_models::{ArchConfig, Mode, ModelState, Trace, Trainable};

fn stream(n_classes: usize, n_tasks: usize) -> TaskStream {
    let ds = SyntheticSpec {
        n_classes,
        image_size: 8,
        train_per_class: 40,
        test_per_class: 30,
        ..Default::default()
    }
    .generate()
    .normalized();
    build_task_stream(&ds, n_tasks, 1).unwrap()
}

fn arch() -> ArchConfig {
    ArchConfig::small_cnn([3, 8, 8], vec![8], 16)
}

/// Full-batch SGD on the union of every task's training data.
fn fitted(stream: &TaskStream, steps: usize) -> ModelState {
    let classes = stream.classes_upto(stream.n_tasks());
    let mut model = ModelState::init_backbone(&arch(), &classes, 5).unwrap();
    let train = stream.tasks.iter().skip(1).fold(stream.tasks[0].train.clone(), |acc, t| acc.concat(&t.train));
    let x = train.all_f64();
    let y = model.head_positions(&train.labels).unwrap();
    let opt = Sgd::new(0.1, 0.0);
    for _ in 0..steps {
        let g = Graph::new();
        let b = model.bind(&g, Trainable::All);
        let mut trace = Trace::new();
        let f = model.features(&b, g.constant(x.clone().into_dyn()), Mode::Train, &mut trace);
        let loss = model.head(&b, f).log_softmax().pick(&y).mean().scale(-1.0);
        let grads = b.gradients(&g.backward(loss));
        model.sgd_step(&opt, &grads);
        model.absorb(&trace);
    }
    model
}

/// Three binomial standard deviations around chance.
fn near_chance(acc: f64, k: usize, n: usize) -> bool {
    let p = 1.0 / k as f64;
    (acc - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn fitted_model_rows_have_one_entry_per_task() {
    let s = stream(4, 2);
    let model = fitted(&s, 60);
    let row = evaluate_task_accuracies(&model, &s, 2).unwrap();
    assert_eq!(row.len(), 2);
    assert!(row.iter().all(|&a| a > 0.9), "{row:?}");
    assert_eq!(evaluate_task_accuracies(&model, &s, 1).unwrap().len(), 1);
}

#[test]
fn untrained_ten_class_model_scores_near_chance() {
    let s = stream(10, 1);
    // One random network can correlate with the classes; the expectation
    // over initializations is chance.
    let seeds = 10;
    let acc = (0..seeds)
        .map(|seed| {
            let model = ModelState::init_backbone(&arch(), &s.classes_upto(1), seed).unwrap();
            evaluate_task_accuracies(&model, &s, 1).unwrap()[0]
        })
        .sum::<f64>()
        / seeds as f64;
    assert!(near_chance(acc, 10, seeds as usize * s.tasks[0].test.len()), "{acc}");
}

#[test]
fn missing_classes_are_a_contract_violation() {
    let s = stream(4, 2);
    let model = ModelState::init_backbone(&arch(), &s.tasks[0].class_ids, 0).unwrap();
    assert!(matches!(evaluate_task_accuracies(&model, &s, 2), Err(MetricError::Contract(_))));
    assert!(evaluate_task_accuracies(&model, &s, 1).is_ok());
}

#[test]
fn confusion_rows_sum_to_class_counts() {
    let s = stream(4, 2);
    let model = fitted(&s, 30);
    let m = confusion_matrix(&model, &s).unwrap();
    for (i, c) in m.classes.iter().enumerate() {
        let n = s.tasks.iter().map(|t| t.test.labels.iter().filter(|l| *l == c).count()).sum::<usize>();
        assert_eq!(m.row_sums()[i], n);
    }
}

#[test]
fn identity_corruption_matches_clean_and_extreme_noise_is_chance() {
    let s = stream(4, 2);
    let model = fitted(&s, 60);
    let clean = evaluate_task_accuracies(&model, &s, 2).unwrap();
    let specs: Vec<CorruptionSpec> = CorruptionKind::ALL.into_iter().map(CorruptionSpec::identity).collect();
    for score in corruption_score(&model, &s, 2, &specs).unwrap() {
        assert_eq!(score.per_task, clean, "{}", score.label);
    }
    let extreme = CorruptionSpec::with_parameter(CorruptionKind::GaussianNoise, 1e4);
    let score = &corruption_score(&model, &s, 2, &[extreme]).unwrap()[0];
    let n: usize = s.tasks.iter().map(|t| t.test.len()).sum();
    assert!(near_chance(score.accuracy, 4, n), "{}", score.accuracy);
}

#[test]
fn calibration_of_a_model_covers_every_test_example() {
    let s = stream(4, 2);
    let model = fitted(&s, 30);
    let (conf, correct) = confidences(&model, &s, 2).unwrap();
    let report = expected_calibration_error(&conf, &correct, DEFAULT_BINS).unwrap();
    assert_eq!(report.count.iter().sum::<usize>(), 4 * 30);
    let hits = correct.iter().filter(|c| **c).count() as f64 / correct.len() as f64;
    let acc = (accuracy_on(&model, &s.tasks[0].test).unwrap() + accuracy_on(&model, &s.tasks[1].test).unwrap()) / 2.0;
    assert!((hits - acc).abs() < 1e-12);
}

#[test]
fn model_flatness_starts_at_the_training_loss() {
    let s = stream(4, 2);
    let model = fitted(&s, 30);
    let landscape = ModelLandscape {
        model: &model,
        sets: s.tasks.iter().map(|t| &t.train).collect(),
    };
    let curve = flatness_probe(&landscape, &[0.0, 0.05, 0.5], 3, 0).unwrap();
    let again = flatness_probe(&landscape, &[0.0], 3, 1).unwrap();
    assert_eq!(curve[0].mean_loss, again[0].mean_loss);
    assert!(curve[2].mean_loss > curve[0].mean_loss);
}

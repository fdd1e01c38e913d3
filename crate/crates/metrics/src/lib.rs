//! Evaluation for class-incremental runs.
//!
//! Everything here is read-only on models. Predictions are made over all
//! known classes with no task identity at test time.

mod accuracy;
mod calibration;
mod confusion;
mod corruption;
mod error;
mod flatness;
mod predict;

pub use accuracy::{
    accuracy_on, average_accuracy_per_task, average_forgetting, average_incremental_accuracy,
    evaluate_task_accuracies, AccuracyMatrix,
};
pub use calibration::{expected_calibration_error, CalibrationReport, DEFAULT_BINS};
pub use confusion::{confusion_matrix, ConfusionMatrix};
pub use corruption::{confidences, corruption_score, CorruptionScore};
pub use error::{MetricError, Result};
pub use flatness::{flatness_probe, FlatnessPoint, Landscape, ModelLandscape, DEFAULT_SIGMAS, DEFAULT_TRIALS};
pub use predict::{argmax, logits_of, predict, softmax_rows};

//! Class-by-class confusion counts over every task seen so far.

use fedgtg_data::TaskStream;
use fedgtg_models::ModelState;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{predict, MetricError, Result};

/// `counts[i][j]`: test samples of `classes[i]` predicted as `classes[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<usize>,
    pub counts: Array2<usize>,
}

impl ConfusionMatrix {
    /// Tallies `(true, predicted)` pairs; both must be in `classes`.
    pub fn tally(classes: &[usize], truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(MetricError::Contract(format!("{} labels but {} predictions", truth.len(), predicted.len())));
        }
        let index = |c: &usize| {
            classes
                .iter()
                .position(|k| k == c)
                .ok_or_else(|| MetricError::Contract(format!("class {c} is not tracked")))
        };
        let mut counts = Array2::zeros((classes.len(), classes.len()));
        for (t, p) in truth.iter().zip(predicted) {
            counts[[index(t)?, index(p)?]] += 1;
        }
        Ok(Self {
            classes: classes.to_vec(),
            counts,
        })
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.rows().into_iter().map(|r| r.sum()).collect()
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn normalized(&self) -> Array2<f64> {
        let mut out = self.counts.mapv(|c| c as f64);
        for mut row in out.rows_mut() {
            let s = row.sum();
            if s > 0.0 {
                row /= s;
            }
        }
        out
    }
}

/// Confusion over the test sets of every task in `stream`, with rows and
/// columns in the model's head order.
pub fn confusion_matrix(model: &ModelState, stream: &TaskStream) -> Result<ConfusionMatrix> {
    let mut truth = Vec::new();
    let mut predicted = Vec::new();
    for task in &stream.tasks {
        truth.extend_from_slice(&task.test.labels);
        predicted.extend(predict(model, &task.test)?);
    }
    ConfusionMatrix::tally(&model.known_classes, &truth, &predicted)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn perfect_predictor_is_diagonal() {
        let truth = [0, 1, 2, 2, 1];
        let m = ConfusionMatrix::tally(&[0, 1, 2], &truth, &truth).unwrap();
        assert_eq!(m.counts, ndarray::arr2(&[[1, 0, 0], [0, 2, 0], [0, 0, 2]]));
    }

    #[test]
    fn constant_predictor_fills_one_column() {
        let m = ConfusionMatrix::tally(&[5, 3], &[5, 3, 3], &[3, 3, 3]).unwrap();
        assert_eq!(m.counts, ndarray::arr2(&[[0, 1], [0, 2]]));
        assert_eq!(m.normalized()[[0, 1]], 1.0);
    }

    #[test]
    fn unknown_classes_are_rejected() {
        assert!(ConfusionMatrix::tally(&[0, 1], &[2], &[0]).is_err());
        assert!(ConfusionMatrix::tally(&[0, 1], &[0], &[0, 1]).is_err());
    }

    #[test]
    fn agrees_with_per_sample_tally_on_200_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let k = rng.random_range(1..8);
            let classes: Vec<usize> = (0..k).map(|i| 10 * i + 1).collect();
            let n = rng.random_range(0..100);
            let truth: Vec<usize> = (0..n).map(|_| classes[rng.random_range(0..k)]).collect();
            let pred: Vec<usize> = (0..n).map(|_| classes[rng.random_range(0..k)]).collect();
            let m = ConfusionMatrix::tally(&classes, &truth, &pred).unwrap();
            for (i, ci) in classes.iter().enumerate() {
                for (j, cj) in classes.iter().enumerate() {
                    let expected = (0..n).filter(|&s| truth[s] == *ci && pred[s] == *cj).count();
                    assert_eq!(m.counts[[i, j]], expected);
                }
                assert_eq!(m.row_sums()[i], truth.iter().filter(|t| *t == ci).count());
            }
        }
    }
}

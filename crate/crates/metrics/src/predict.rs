//! Class-incremental prediction: argmax over every known class.

use fedgtg_data::ImageSet;
use fedgtg_models::ModelState;
use ndarray::{s, Array2};

use crate::Result;

/// Rows per eval-mode forward pass.
const CHUNK: usize = 256;

/// Eval-mode logits for every image of `set`, in order.
pub fn logits_of(model: &ModelState, set: &ImageSet) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((set.len(), model.n_classes()));
    for start in (0..set.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(set.len());
        let positions: Vec<usize> = (start..end).collect();
        let logits = model.logits(&set.batch(&positions))?;
        out.slice_mut(s![start..end, ..]).assign(&logits);
    }
    Ok(out)
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Softmax probabilities of each row, computed stably.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

/// Predicted class ids for `set`.
pub fn predict(model: &ModelState, set: &ImageSet) -> Result<Vec<usize>> {
    let logits = logits_of(model, set)?;
    Ok(logits.rows().into_iter().map(|r| model.known_classes[argmax(r)]).collect())
}

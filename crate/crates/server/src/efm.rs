//! The empirical feature matrix: a feature-space Fisher of the global head,
//! estimated on generated features.

use fedgtg_models::{GeneratorKind, GeneratorState, ModelState};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, Axis, Ix2};
use serde::{Deserialize, Serialize};

use crate::{Result, ServerError};

pub const SYMMETRY_TOL: f64 = 1e-8;
pub const PSD_TOL: f64 = 1e-8;

/// Features pushed through the generator per forward pass.
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EFMatrix {
    pub matrix: Array2<f64>,
    pub task_id: usize,
    pub sample_count: usize,
}

impl EFMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim();
        let m = DMatrix::from_fn(d, d, |i, j| self.matrix[[i, j]]);
        SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Symmetric within [`SYMMETRY_TOL`] and eigenvalues at least `-PSD_TOL`.
    pub fn check(&self) -> Result<()> {
        let d = self.dim();
        if self.matrix.ncols() != d {
            return Err(ServerError::Contract(format!("{:?} is not square", self.matrix.shape())));
        }
        for i in 0..d {
            for j in 0..i {
                if (self.matrix[[i, j]] - self.matrix[[j, i]]).abs() > SYMMETRY_TOL {
                    return Err(ServerError::Contract(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        let min = self.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(ServerError::Contract(format!("smallest eigenvalue {min}")));
        }
        Ok(())
    }
}

/// `W^T (diag(p) - p p^T) W` for one feature, where `p = softmax(W f + b)`.
/// Equals `sum_k p_k g_k g_k^T` with `g_k` the feature gradient of `ln p_k`.
pub fn softmax_fisher(weight: &Array2<f64>, bias: &Array1<f64>, feature: &Array1<f64>) -> Array2<f64> {
    let logits = weight.dot(feature) + bias;
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = logits.mapv(|v| (v - max).exp());
    let p = &e / e.sum();
    let mut middle = Array2::from_diag(&p);
    let pp = p.view().insert_axis(Axis(1)).dot(&p.view().insert_axis(Axis(0)));
    middle -= &pp;
    weight.t().dot(&middle).dot(weight)
}

/// Average [`softmax_fisher`] over `features` rows, symmetrized.
pub fn fisher_of_features(model: &ModelState, features: &Array2<f64>) -> Array2<f64> {
    let w = model.head_weight();
    let b = model.head_bias();
    let d = model.feature_dim;
    let mut total = Array2::<f64>::zeros((d, d));
    for f in features.outer_iter() {
        total += &softmax_fisher(&w, &b, &f.to_owned());
    }
    total /= features.nrows().max(1) as f64;
    let t = total.t().to_owned();
    (total + t) * 0.5
}

/// Estimates the matrix from `n_samples` generated features. The noise is one
/// seeded stream, so the first `n` samples of a larger draw are the samples
/// of a smaller one.
pub fn compute_efm(
    feature_generator: &GeneratorState,
    global: &ModelState,
    n_samples: usize,
    task_id: usize,
    seed: u64,
) -> Result<EFMatrix> {
    if n_samples == 0 {
        return Err(ServerError::Contract("the feature matrix needs at least one sample".into()));
    }
    if feature_generator.kind != GeneratorKind::Feature || feature_generator.output_shape != [global.feature_dim] {
        return Err(ServerError::Contract("expected a feature generator matching the model width".into()));
    }
    let (noise, _) =
        fedgtg_models::sample_noise_labels(n_samples, global.n_classes(), feature_generator.noise_dim, seed)?;
    let mut features = Array2::<f64>::zeros((n_samples, global.feature_dim));
    for start in (0..n_samples).step_by(CHUNK) {
        let end = (start + CHUNK).min(n_samples);
        let out = feature_generator.generate(&noise.slice(s![start..end, ..]).to_owned())?;
        features
            .slice_mut(s![start..end, ..])
            .assign(&out.into_dimensionality::<Ix2>().unwrap());
    }
    let efm = EFMatrix {
        matrix: fisher_of_features(global, &features),
        task_id,
        sample_count: n_samples,
    };
    efm.check()?;
    Ok(efm)
}

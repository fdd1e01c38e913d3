//! Loss growth under isotropic Gaussian parameter noise.

use fedgtg_autograd::ParamMap;
use fedgtg_data::ImageSet;
use fedgtg_models::{derive_seed, ModelState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{logits_of, MetricError, Result};

pub const DEFAULT_SIGMAS: [f64; 5] = [0.0, 0.01, 0.02, 0.05, 0.1];
pub const DEFAULT_TRIALS: usize = 5;

/// A scalar loss over a named parameter set.
pub trait Landscape: Sync {
    fn params(&self) -> &ParamMap;
    fn loss(&self, params: &ParamMap) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessPoint {
    pub sigma: f64,
    pub mean_loss: f64,
    /// Standard error of the mean over trials; zero at `sigma = 0`.
    pub std_error: f64,
    pub trials: usize,
}

/// Adds `sigma * N(0, 1)` to every entry, visiting tensors in name order.
fn perturb(params: &ParamMap, sigma: f64, rng: &mut ChaCha8Rng) -> ParamMap {
    params
        .iter()
        .map(|(name, t)| {
            let noisy = t.mapv(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v + sigma * z
            });
            (name.clone(), noisy)
        })
        .collect()
}

/// For each sigma, the mean loss over `trials` perturbed copies. The zero
/// entry is the unperturbed loss, evaluated once.
pub fn flatness_probe(landscape: &dyn Landscape, sigmas: &[f64], trials: usize, seed: u64) -> Result<Vec<FlatnessPoint>> {
    if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || sigmas.windows(2).any(|w| w[0] > w[1]) {
        return Err(MetricError::Contract(format!("sigmas {sigmas:?} must be non-negative and ascending")));
    }
    if trials == 0 {
        return Err(MetricError::Contract("zero trials".into()));
    }
    let base = landscape.params();
    let mut curve = Vec::with_capacity(sigmas.len());
    for (i, &sigma) in sigmas.iter().enumerate() {
        if sigma == 0.0 {
            curve.push(FlatnessPoint {
                sigma,
                mean_loss: landscape.loss(base)?,
                std_error: 0.0,
                trials: 1,
            });
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("flatness.{i}")));
        let losses = (0..trials)
            .map(|_| landscape.loss(&perturb(base, sigma, &mut rng)))
            .collect::<Result<Vec<f64>>>()?;
        let n = losses.len() as f64;
        let mean = losses.iter().sum::<f64>() / n;
        let std_error = if losses.len() > 1 {
            (losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        curve.push(FlatnessPoint {
            sigma,
            mean_loss: mean,
            std_error,
            trials,
        });
    }
    Ok(curve)
}

/// Mean over sets of the per-set mean cross-entropy of a classifier. Only
/// parameters are perturbed; batch-norm buffers stay fixed.
pub struct ModelLandscape<'a> {
    pub model: &'a ModelState,
    pub sets: Vec<&'a ImageSet>,
}

impl ModelLandscape<'_> {
    fn mean_ce(model: &ModelState, set: &ImageSet) -> Result<f64> {
        let logits = logits_of(model, set)?;
        let positions = model.head_positions(&set.labels)?;
        let total: f64 = logits
            .rows()
            .into_iter()
            .zip(&positions)
            .map(|(row, &y)| {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - row[y]
            })
            .sum();
        Ok(total / set.len() as f64)
    }
}

impl Landscape for ModelLandscape<'_> {
    fn params(&self) -> &ParamMap {
        &self.model.params
    }

    fn loss(&self, params: &ParamMap) -> Result<f64> {
        let sets: Vec<_> = self.sets.iter().filter(|s| !s.is_empty()).collect();
        if sets.is_empty() {
            return Err(MetricError::Contract("flatness over no examples".into()));
        }
        let model = ModelState {
            params: params.clone(),
            ..self.model.clone()
        };
        let mut total = 0.0;
        for set in &sets {
            total += Self::mean_ce(&model, set)?;
        }
        Ok(total / sets.len() as f64)
    }
}

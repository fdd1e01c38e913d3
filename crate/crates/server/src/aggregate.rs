//! Client selection and sample-weighted parameter averaging.

use fedgtg_autograd::{ParamMap, Tensor};
use fedgtg_models::{param_digest, ModelState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Result, ServerError};

/// Weights must sum to one within this tolerance.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// `max(1, round(rate * n_total))` distinct ids drawn uniformly without
/// replacement, returned sorted.
pub fn select_clients(n_total: usize, rate: f64, seed: u64) -> Result<Vec<usize>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(ServerError::Config(format!("participation rate {rate} outside (0, 1]")));
    }
    if n_total == 0 {
        return Err(ServerError::Config("no clients to select from".into()));
    }
    let k = ((rate * n_total as f64).round() as usize).clamp(1, n_total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = rand::seq::index::sample(&mut rng, n_total, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// FedAVG weights: each count over the total.
pub fn sample_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(ServerError::Contract("aggregation needs at least one sample".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

fn same_layout(a: &ParamMap, b: &ParamMap) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|((ka, ta), (kb, tb))| ka == kb && ta.shape() == tb.shape())
}

fn weighted_mean(maps: &[(&ParamMap, f64)]) -> ParamMap {
    let mut out: ParamMap = maps[0].0.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.raw_dim()))).collect();
    for (map, w) in maps {
        for (k, acc) in out.iter_mut() {
            acc.scaled_add(*w, &map[k]);
        }
    }
    out
}

/// Parameter-wise weighted average of structurally identical models,
/// batch-norm buffers included.
///
/// Summation order is fixed by sorting on (weight bits, parameter digest), so
/// permuting the input pairs leaves the result bit-identical.
pub fn aggregate(models: &[ModelState], weights: &[f64]) -> Result<ModelState> {
    let Some(first) = models.first() else {
        return Err(ServerError::Contract("nothing to aggregate".into()));
    };
    if models.len() != weights.len() {
        return Err(ServerError::Contract(format!("{} models for {} weights", models.len(), weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(ServerError::Contract("weights must be finite and non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(ServerError::Contract(format!("weights sum to {sum}")));
    }
    for (i, m) in models.iter().enumerate().skip(1) {
        if m.arch != first.arch
            || m.known_classes != first.known_classes
            || !same_layout(&m.params, &first.params)
            || !same_layout(&m.buffers, &first.buffers)
        {
            return Err(ServerError::Contract(format!("model {i} differs structurally from model 0")));
        }
    }

    let mut order: Vec<(u64, String, usize)> = models
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(i, (m, w))| (w.to_bits(), param_digest(&m.params) + &param_digest(&m.buffers), i))
        .collect();
    order.sort();
    let params: Vec<_> = order.iter().map(|&(_, _, i)| (&models[i].params, weights[i])).collect();
    let buffers: Vec<_> = order.iter().map(|&(_, _, i)| (&models[i].buffers, weights[i])).collect();

    let mut out = first.clone();
    out.params = weighted_mean(&params);
    out.buffers = weighted_mean(&buffers);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use fedgtg_models::ArchConfig;
    use proptest::prelude::*;

    use super::*;

    fn model(seed: u64) -> ModelState {
        let arch = ArchConfig::small_cnn([3, 4, 4], vec![2], 3);
        ModelState::init_backbone(&arch, &[0, 1], seed).unwrap()
    }

    fn fill(m: &ModelState, v: f64) -> ModelState {
        let mut m = m.clone();
        m.params.values_mut().chain(m.buffers.values_mut()).for_each(|t| t.fill(v));
        m
    }

    #[test]
    fn full_participation_selects_everyone() {
        assert_eq!(select_clients(10, 1.0, 3).unwrap(), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn partial_participation_is_distinct_and_deterministic() {
        let a = select_clients(200, 0.1, 9).unwrap();
        assert_eq!(a.len(), 20);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, select_clients(200, 0.1, 9).unwrap());
        assert_eq!(select_clients(5, 0.01, 0).unwrap().len(), 1);
        assert!(select_clients(5, 0.0, 0).is_err());
        assert!(select_clients(5, 1.5, 0).is_err());
    }

    #[test]
    fn selection_is_roughly_uniform() {
        let mut hits = [0usize; 10];
        for s in 0..2000 {
            for id in select_clients(10, 0.3, s).unwrap() {
                hits[id] += 1;
            }
        }
        // 600 expected per id; binomial sd is about 20.
        assert!(hits.iter().all(|&h| (500..700).contains(&h)), "{hits:?}");
    }

    #[test]
    fn identical_models_are_fixed_points() {
        let m = model(1);
        let out = aggregate(&[m.clone(), m.clone(), m.clone()], &[0.2, 0.5, 0.3]).unwrap();
        for (a, b) in out.params.values().zip(m.params.values()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
        assert_eq!(out.known_classes, m.known_classes);
    }

    #[test]
    fn hand_averages() {
        let m = model(0);
        let half = aggregate(&[fill(&m, 0.0), fill(&m, 2.0)], &[0.5, 0.5]).unwrap();
        assert!(half.params.values().chain(half.buffers.values()).flatten().all(|&v| v == 1.0));
        let w = sample_weights(&[10, 20]).unwrap();
        let skew = aggregate(&[fill(&m, 0.0), fill(&m, 3.0)], &w).unwrap();
        assert!(skew.params.values().flatten().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn structural_mismatch_is_rejected() {
        let a = model(0);
        let b = a.extend_head(&[5]).unwrap();
        assert!(aggregate(&[a.clone(), b], &[0.5, 0.5]).is_err());
        assert!(aggregate(&[a.clone(), a.clone()], &[0.5, 0.6]).is_err());
        assert!(aggregate(&[], &[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn permutation_invariant(seeds in proptest::collection::vec(any::<u64>(), 2..6), counts in proptest::collection::vec(1usize..50, 6), rot in 0usize..6) {
            let models: Vec<_> = seeds.iter().map(|&s| model(s)).collect();
            let w = sample_weights(&counts[..models.len()]).unwrap();
            let base = aggregate(&models, &w).unwrap();
            let mut pairs: Vec<_> = models.into_iter().zip(w).collect();
            pairs.reverse();
            let r = rot % pairs.len();
            pairs.rotate_left(r);
            let (m2, w2): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let shuffled = aggregate(&m2, &w2).unwrap();
            prop_assert_eq!(base.digest(), shuffled.digest());
        }
    }
}

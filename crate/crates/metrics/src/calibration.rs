//! Expected calibration error over equal-width confidence bins.

use serde::{Deserialize, Serialize};

use crate::{MetricError, Result};

pub const DEFAULT_BINS: usize = 15;

/// Per-bin statistics; empty bins report zero confidence and accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// `n_bins + 1` edges from 0 to 1.
    pub bin_edges: Vec<f64>,
    pub confidence: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub count: Vec<usize>,
    pub ece: f64,
}

/// Bin `b` covers `(b/n, (b+1)/n]`, except that bin 0 also takes 0. Edges
/// are compared as the floats `i as f64 / n as f64`, so a confidence equal to
/// an edge lands in the lower bin whatever `conf * n` rounds to.
fn bin_of(conf: f64, n_bins: usize) -> usize {
    let edge = |i: usize| i as f64 / n_bins as f64;
    let mut b = ((conf * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
    while b > 0 && conf <= edge(b) {
        b -= 1;
    }
    while b + 1 < n_bins && conf > edge(b + 1) {
        b += 1;
    }
    b
}

/// `sum_b (count_b / N) |acc_b - conf_b|`.
pub fn expected_calibration_error(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<CalibrationReport> {
    if confidences.is_empty() {
        return Err(MetricError::Contract("calibration of an empty sample".into()));
    }
    if confidences.len() != correct.len() {
        return Err(MetricError::Contract(format!(
            "{} confidences but {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if n_bins == 0 {
        return Err(MetricError::Contract("zero bins".into()));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(MetricError::Contract(format!("confidence {c} outside [0, 1]")));
    }
    let mut conf_sum = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_of(c, n_bins);
        conf_sum[b] += c;
        hits[b] += ok as usize;
        count[b] += 1;
    }
    let n = confidences.len() as f64;
    let mut confidence = vec![0.0; n_bins];
    let mut accuracy = vec![0.0; n_bins];
    let mut ece = 0.0;
    for b in 0..n_bins {
        if count[b] > 0 {
            confidence[b] = conf_sum[b] / count[b] as f64;
            accuracy[b] = hits[b] as f64 / count[b] as f64;
            ece += count[b] as f64 / n * (accuracy[b] - confidence[b]).abs();
        }
    }
    Ok(CalibrationReport {
        bin_edges: (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect(),
        confidence,
        accuracy,
        count,
        ece: ece.clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn confident_and_correct_is_calibrated() {
        let r = expected_calibration_error(&[1.0; 10], &[true; 10], DEFAULT_BINS).unwrap();
        assert_eq!(r.ece, 0.0);
        assert_eq!(r.count[DEFAULT_BINS - 1], 10);
    }

    #[test]
    fn single_bin_gap() {
        let correct: Vec<bool> = (0..10).map(|i| i < 6).collect();
        let r = expected_calibration_error(&[0.8; 10], &correct, DEFAULT_BINS).unwrap();
        assert!((r.ece - 0.2).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(expected_calibration_error(&[], &[], 15).is_err());
        assert!(expected_calibration_error(&[0.5], &[true, false], 15).is_err());
        assert!(expected_calibration_error(&[1.5], &[true], 15).is_err());
        assert!(expected_calibration_error(&[0.5], &[true], 0).is_err());
    }

    #[test]
    fn edges_belong_to_the_lower_bin() {
        assert_eq!(bin_of(0.0, 15), 0);
        assert_eq!(bin_of(1.0 / 15.0, 15), 0);
        assert_eq!(bin_of(0.5, 2), 0);
        assert_eq!(bin_of(0.500001, 2), 1);
        assert_eq!(bin_of(1.0, 15), 14);
    }

    /// Direct tally: for every bin, scan all samples.
    fn oracle(conf: &[f64], correct: &[bool], n_bins: usize) -> f64 {
        let n = conf.len() as f64;
        let mut ece = 0.0;
        for b in 0..n_bins {
            let lo = b as f64 / n_bins as f64;
            let hi = (b + 1) as f64 / n_bins as f64;
            let members: Vec<usize> = (0..conf.len())
                .filter(|&i| (conf[i] > lo || (b == 0 && conf[i] == 0.0)) && conf[i] <= hi)
                .collect();
            if members.is_empty() {
                continue;
            }
            let m = members.len() as f64;
            let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / m;
            let avg = members.iter().map(|&i| conf[i]).sum::<f64>() / m;
            ece += m / n * (acc - avg).abs();
        }
        ece
    }

    #[test]
    fn agrees_with_brute_force_on_200_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.random_range(1..300);
            let conf: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let correct: Vec<bool> = conf.iter().map(|&c| rng.random::<f64>() < c).collect();
            let r = expected_calibration_error(&conf, &correct, DEFAULT_BINS).unwrap();
            assert!((r.ece - oracle(&conf, &correct, DEFAULT_BINS)).abs() < 1e-9);
            assert_eq!(r.count.iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn confidences_on_an_edge_go_to_the_lower_bin() {
        for n_bins in 1..40 {
            for k in 0..=n_bins {
                let c = k as f64 / n_bins as f64;
                let r = expected_calibration_error(&[c], &[true], n_bins).unwrap();
                let want = k.max(1) - 1;
                assert_eq!(r.count[want], 1, "{k}/{n_bins}");
            }
        }
    }

    proptest! {
        #[test]
        fn bounded_and_counts_sum(pairs in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200)) {
            let (conf, correct): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
            let r = expected_calibration_error(&conf, &correct, DEFAULT_BINS).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.ece));
            prop_assert_eq!(r.count.iter().sum::<usize>(), conf.len());
        }

        #[test]
        fn order_invariant(pairs in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..100), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (c1, k1): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
            let (c2, k2): (Vec<f64>, Vec<bool>) = shuffled.into_iter().unzip();
            let a = expected_calibration_error(&c1, &k1, DEFAULT_BINS).unwrap().ece;
            let b = expected_calibration_error(&c2, &k2, DEFAULT_BINS).unwrap().ece;
            prop_assert!((a - b).abs() < 1e-12);
        }

        /// Moving confidences within their bin moves each bin mean by the
        /// mean shift, so ECE changes by at most the largest shift.
        #[test]
        fn stable_under_in_bin_perturbation(
            pairs in proptest::collection::vec((0usize..15, 0.1f64..0.9, any::<bool>(), -0.05f64..0.05), 1..100)
        ) {
            let w = 1.0 / 15.0;
            let conf: Vec<f64> = pairs.iter().map(|p| (p.0 as f64 + p.1) * w).collect();
            let moved: Vec<f64> = pairs.iter().map(|p| (p.0 as f64 + p.1 + p.3) * w).collect();
            let correct: Vec<bool> = pairs.iter().map(|p| p.2).collect();
            let a = expected_calibration_error(&conf, &correct, 15).unwrap();
            let b = expected_calibration_error(&moved, &correct, 15).unwrap();
            prop_assert_eq!(&a.count, &b.count);
            prop_assert_eq!(&a.accuracy, &b.accuracy);
            prop_assert!((a.ece - b.ece).abs() <= 0.05 * w + 1e-12);
        }
    }
}

//! Calibration, confusion and flatness on hand-made inputs.
//!
//! `cargo run -p fedgtg --example evaluation`

use fedgtg::autograd::ParamMap;
use fedgtg::metrics::{expected_calibration_error, flatness_probe, ConfusionMatrix, Landscape, DEFAULT_BINS};
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `0.5 * sum_i h_i x_i^2`, whose Gaussian-perturbed mean is known exactly.
struct Bowl {
    params: ParamMap,
    h: Vec<f64>,
}

impl Landscape for Bowl {
    fn params(&self) -> &ParamMap {
        &self.params
    }

    fn loss(&self, params: &ParamMap) -> fedgtg::metrics::Result<f64> {
        Ok(0.5 * params["x"].iter().zip(&self.h).map(|(x, h)| h * x * x).sum::<f64>())
    }
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    // An overconfident predictor: says 0.9 but is right 60% of the time.
    let conf: Vec<f64> = (0..1000).map(|_| rng.random_range(0.85..0.95)).collect();
    let correct: Vec<bool> = (0..1000).map(|_| rng.random_bool(0.6)).collect();
    let report = expected_calibration_error(&conf, &correct, DEFAULT_BINS).unwrap();
    println!("overconfident ECE {:.3}", report.ece);
    for b in (0..DEFAULT_BINS).filter(|&b| report.count[b] > 0) {
        println!(
            "  bin ({:.2}, {:.2}]: {} samples, confidence {:.3}, accuracy {:.3}",
            report.bin_edges[b],
            report.bin_edges[b + 1],
            report.count[b],
            report.confidence[b],
            report.accuracy[b]
        );
    }

    let classes = [3, 7, 9];
    let truth = [3, 3, 7, 7, 9, 9, 9];
    let predicted = [3, 7, 7, 7, 9, 3, 9];
    let cm = ConfusionMatrix::tally(&classes, &truth, &predicted).unwrap();
    println!("confusion counts\n{}\nrow-normalized\n{:.2}", cm.counts, cm.normalized());

    let dim = 2000;
    let h: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..2.0)).collect();
    let bowl = Bowl {
        params: ParamMap::from([("x".to_string(), ArrayD::zeros(IxDyn(&[dim])))]),
        h: h.clone(),
    };
    let trace: f64 = h.iter().sum();
    for p in flatness_probe(&bowl, &[0.0, 0.01, 0.05, 0.1], 20, 1).unwrap() {
        let exact = p.sigma * p.sigma * trace / 2.0;
        println!("sigma {:.2}: probe {:.4} ± {:.4}, exact {exact:.4}", p.sigma, p.mean_loss, p.std_error);
    }
}

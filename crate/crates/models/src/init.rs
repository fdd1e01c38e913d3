//! Seed derivation and parameter initializers.

use fedgtg_autograd::Tensor;
use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

/// A child seed for `tag`, independent of every other tag under `seed`.
///
/// Initializing each tensor from its own derived stream makes a parameter's
/// value independent of how many other parameters exist.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn rng_for(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    He { fan_in: usize },
    /// Uniform on `[-bound, bound]`.
    Uniform { bound: f64 },
}

impl Init {
    pub fn sample(self, shape: &[usize], seed: u64, tag: &str) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(IxDyn(shape)),
            Init::Ones => Tensor::ones(IxDyn(shape)),
            Init::He { fan_in } => {
                let mut rng = rng_for(seed, tag);
                let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).unwrap();
                Tensor::from_shape_simple_fn(IxDyn(shape), || normal.sample(&mut rng))
            }
            Init::Uniform { bound } => {
                let mut rng = rng_for(seed, tag);
                Tensor::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-bound..=bound))
            }
        }
    }
}

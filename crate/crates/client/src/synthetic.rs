//! Synthetic replay drawn from the broadcast generators.

use fedgtg_models::{derive_seed, GeneratorKind, GeneratorState, SyntheticBatch};

use crate::{ClientError, Result};

/// `n_batches` image batches from `data_gen` and as many feature batches
/// from `feat_gen`, each of `batch_size` rows labelled in `[0, q)` from the
/// noise. Generators run in eval mode; batch `b` depends only on `seed` and `b`.
pub fn build_synthetic_batches(
    data_gen: &GeneratorState,
    feat_gen: &GeneratorState,
    q: usize,
    batch_size: usize,
    n_batches: usize,
    seed: u64,
) -> Result<(Vec<SyntheticBatch>, Vec<SyntheticBatch>)> {
    if data_gen.kind != GeneratorKind::Data || feat_gen.kind != GeneratorKind::Feature {
        return Err(ClientError::Contract("expected a data generator and a feature generator".into()));
    }
    if data_gen.q() != q || feat_gen.q() != q {
        return Err(ClientError::Contract(format!(
            "generators cover {} and {} classes, expected {q}",
            data_gen.q(),
            feat_gen.q()
        )));
    }
    let mut images = Vec::with_capacity(n_batches);
    let mut features = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        images.push(data_gen.sample(batch_size, derive_seed(seed, &format!("synthetic.images.{b}")))?);
        features.push(feat_gen.sample(batch_size, derive_seed(seed, &format!("synthetic.features.{b}")))?);
    }
    Ok((images, features))
}

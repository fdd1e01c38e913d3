//! Objectives for training generators against a frozen classifier.
//!
//! Class arguments are head positions (column indices of the logits).

use fedgtg_autograd::Var;
use ndarray::Array1;

use crate::{LossError, Result};

/// Mean cross-entropy of `logits` restricted to `classes`, over the rows whose
/// label lies in `classes`. Labels are remapped into the restricted space.
/// `None` when no row qualifies.
pub(crate) fn truncated_ce<'g>(logits: Var<'g>, labels: &[usize], classes: &[usize]) -> Option<Var<'g>> {
    let (rows, local): (Vec<usize>, Vec<usize>) = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| classes.iter().position(|c| c == l).map(|j| (i, j)))
        .unzip();
    if rows.is_empty() {
        return None;
    }
    let picked = logits.select_rows(&rows).select_cols(classes).log_softmax().pick(&local);
    Some(-picked.mean())
}

fn check_partition(width: usize, labels: &[usize], last: &[usize], current: &[usize]) -> Result<()> {
    if current.is_empty() {
        return Err(LossError::Contract("the current class set is empty".into()));
    }
    let mut seen = vec![false; width];
    for &c in last.iter().chain(current) {
        if c >= width || seen[c] {
            return Err(LossError::Contract(format!(
                "class position {c} repeated or outside {width} logits"
            )));
        }
        seen[c] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(LossError::Contract("last and current classes must cover every logit".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= width) {
        return Err(LossError::Contract(format!("label {l} outside {width} logits")));
    }
    Ok(())
}

/// `CE_last + lambda_current * CE_current`.
///
/// A sample enters `CE_last` only if its label is an old class and
/// `CE_current` only if it is a current class; each term is averaged over its
/// own samples and an empty term is zero.
pub fn generator_ce_loss<'g>(
    logits: Var<'g>,
    labels: &[usize],
    last: &[usize],
    current: &[usize],
    lambda_current: f64,
) -> Result<Var<'g>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(LossError::Contract(format!("logits {shape:?} for {} labels", labels.len())));
    }
    check_partition(shape[1], labels, last, current)?;
    let g = logits.graph();
    let old = truncated_ce(logits, labels, last).unwrap_or_else(|| g.scalar(0.0));
    let new = truncated_ce(logits, labels, current).unwrap_or_else(|| g.scalar(0.0));
    Ok(old + new.scale(lambda_current))
}

/// Same contract as [`generator_ce_loss`], on head logits of generated features.
pub fn feature_ce_loss<'g>(
    head_logits: Var<'g>,
    labels: &[usize],
    last: &[usize],
    current: &[usize],
    lambda_current: f64,
) -> Result<Var<'g>> {
    generator_ce_loss(head_logits, labels, last, current, lambda_current)
}

/// Row sums must be 1 within this tolerance.
const SIMPLEX_TOL: f64 = 1e-6;

/// `sum_k pbar_k ln pbar_k` for the batch-mean distribution `pbar`: the
/// negated entropy, minimal (`-ln q`) when `pbar` is uniform.
pub fn information_entropy_loss(probabilities: Var<'_>) -> Result<Var<'_>> {
    let p = probabilities.value();
    if p.ndim() != 2 || p.shape()[0] == 0 {
        return Err(LossError::Contract(format!("expected a non-empty [n, q] batch, got {:?}", p.shape())));
    }
    for (i, row) in p.outer_iter().enumerate() {
        let s: f64 = row.sum();
        if (s - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|&v| v < 0.0) {
            return Err(LossError::Contract(format!("row {i} is not a probability vector (sum {s})")));
        }
    }
    Ok(probabilities.channel_mean().xlogx().sum())
}

/// [`information_entropy_loss`] on head probabilities of generated features.
pub fn feature_ie_loss(probabilities: Var<'_>) -> Result<Var<'_>> {
    information_entropy_loss(probabilities)
}

/// Mean over layers of the channel-mean Gaussian KL divergence
/// `KL(N(mu, var) || N(mu_t, var_t))`, stored statistics against measured ones:
/// `ln(s_t / s) + (var + (mu - mu_t)^2) / (2 var_t) - 1/2`.
pub fn batchnorm_loss<'g>(
    stored: &[(Array1<f64>, Array1<f64>)],
    measured: &[(Var<'g>, Var<'g>)],
) -> Result<Var<'g>> {
    if stored.len() != measured.len() || stored.is_empty() {
        return Err(LossError::Contract(format!(
            "{} stored layers against {} measured",
            stored.len(),
            measured.len()
        )));
    }
    let g = measured[0].0.graph();
    let mut total: Option<Var<'g>> = None;
    for (j, ((mu, var), (mu_t, var_t))) in stored.iter().zip(measured).enumerate() {
        let c = mu.len();
        if var.len() != c || mu_t.shape() != [c] || var_t.shape() != [c] {
            return Err(LossError::Contract(format!("layer {j}: channel count mismatch")));
        }
        if var.iter().chain(var_t.value().iter()).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(LossError::Numeric(format!("layer {j}: variance must be positive and finite")));
        }
        let mu = g.constant(mu.clone().into_dyn());
        let var = g.constant(var.clone().into_dyn());
        let spread = var + (mu - *mu_t).square();
        let kl = (var_t.ln() - var.ln()).scale(0.5) + spread.div(var_t).scale(0.5);
        let layer = kl.mean().add_scalar(-0.5);
        total = Some(match total {
            Some(t) => t + layer,
            None => layer,
        });
    }
    Ok(total.unwrap().scale(1.0 / stored.len() as f64))
}

/// Normalized 3x3 Gaussian kernel with unit standard deviation.
pub fn gaussian_kernel3() -> [[f64; 3]; 3] {
    let w = |d2: f64| (-d2 / 2.0).exp();
    let raw = [[w(2.0), w(1.0), w(2.0)], [w(1.0), 1.0, w(1.0)], [w(2.0), w(1.0), w(2.0)]];
    let total: f64 = raw.iter().flatten().sum();
    raw.map(|r| r.map(|v| v / total))
}

/// Mean over the batch of `||x - blur(x)||^2`, with a per-channel 3x3
/// Gaussian blur and reflect padding.
pub fn smoothing_prior_loss(images: Var<'_>) -> Var<'_> {
    let n = images.shape()[0].max(1);
    let residual = images - images.filter3x3_reflect(gaussian_kernel3());
    residual.square().sum().scale(1.0 / n as f64)
}

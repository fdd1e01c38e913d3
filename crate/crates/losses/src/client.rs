//! Objectives minimized by clients on incremental tasks.
//!
//! Class arguments are head positions. Old classes occupy the leading
//! positions of the head, so a teacher with `q_old` classes matches the first
//! `q_old` student logits.

use fedgtg_autograd::Var;
use ndarray::Array2;

use crate::generator::truncated_ce;
use crate::{LossError, Result};

/// Cross-entropy with the softmax taken over `current` logits only. Other
/// logits are excluded (they receive exactly zero gradient).
pub fn masked_ce_loss<'g>(logits: Var<'g>, labels: &[usize], current: &[usize]) -> Result<Var<'g>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() || labels.is_empty() {
        return Err(LossError::Contract(format!("logits {shape:?} for {} labels", labels.len())));
    }
    if let Some(c) = current.iter().find(|&&c| c >= shape[1]) {
        return Err(LossError::Contract(format!("class position {c} outside {} logits", shape[1])));
    }
    if let Some(l) = labels.iter().find(|l| !current.contains(l)) {
        return Err(LossError::Contract(format!("label {l} is not a current-task class")));
    }
    Ok(truncated_ce(logits, labels, current).expect("every label is current"))
}

/// Mean squared difference between the student's leading logits and the
/// teacher's logits (mean over batch and classes).
pub fn logit_distillation_loss<'g>(student: Var<'g>, teacher: Var<'g>) -> Result<Var<'g>> {
    let (s, t) = (student.shape(), teacher.shape());
    if s.len() != 2 || t.len() != 2 || s[0] != t[0] || s[1] < t[1] || t[1] == 0 {
        return Err(LossError::Contract(format!(
            "student logits {s:?} cannot be truncated to teacher logits {t:?}"
        )));
    }
    let old: Vec<usize> = (0..t[1]).collect();
    Ok((student.select_cols(&old) - teacher.detach()).square().mean())
}

/// Cross-entropy of the head over `[real; synthetic]` features with labels
/// `[real_labels; synthetic_labels]` and a softmax over every class.
///
/// Both feature batches are detached, so no gradient reaches whatever
/// produced them.
pub fn finetune_head_loss<'g>(
    head_weight: Var<'g>,
    head_bias: Var<'g>,
    real: Var<'g>,
    real_labels: &[usize],
    synthetic: Var<'g>,
    synthetic_labels: &[usize],
) -> Result<Var<'g>> {
    let (rs, ss) = (real.shape(), synthetic.shape());
    if rs.len() != 2 || ss.len() != 2 || rs[1] != ss[1] {
        return Err(LossError::Contract(format!("feature batches {rs:?} and {ss:?} disagree")));
    }
    if rs[0] != real_labels.len() || ss[0] != synthetic_labels.len() {
        return Err(LossError::Contract("one label per feature row".into()));
    }
    let labels: Vec<usize> = real_labels.iter().chain(synthetic_labels).copied().collect();
    if labels.is_empty() {
        return Err(LossError::Contract("both feature batches are empty".into()));
    }
    let q = head_weight.shape()[0];
    if let Some(l) = labels.iter().find(|&&l| l >= q) {
        return Err(LossError::Contract(format!("label {l} outside {q} classes")));
    }
    let features = real.detach().concat_rows(&synthetic.detach());
    let logp = features.linear(&head_weight, &head_bias).log_softmax();
    Ok(-logp.pick(&labels).mean())
}

/// Symmetry tolerance for the feature matrix, relative to its largest entry.
const SYMMETRY_TOL: f64 = 1e-8;

/// Mean over the batch of `delta^T (lambda_e * E + eta * I) delta` with
/// `delta = current - anchor`; the anchor is treated as a constant.
pub fn efm_loss<'g>(current: Var<'g>, anchor: Var<'g>, e_prev: &Array2<f64>, lambda_e: f64, eta: f64) -> Result<Var<'g>> {
    let (cs, as_) = (current.shape(), anchor.shape());
    let d = e_prev.nrows();
    if cs != as_ || cs.len() != 2 || cs[1] != d || e_prev.ncols() != d || cs[0] == 0 {
        return Err(LossError::Contract(format!(
            "features {cs:?} / {as_:?} against a {}x{} matrix",
            e_prev.nrows(),
            e_prev.ncols()
        )));
    }
    let scale = e_prev.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..d {
        for j in 0..i {
            if (e_prev[[i, j]] - e_prev[[j, i]]).abs() > SYMMETRY_TOL * scale {
                return Err(LossError::Contract(format!("feature matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut kernel = e_prev * lambda_e;
    kernel.diag_mut().mapv_inplace(|v| v + eta);
    let g = current.graph();
    let delta = current - anchor.detach();
    let n = cs[0] as f64;
    Ok(delta.matmul(&g.constant(kernel.into_dyn())).mul(&delta).sum().scale(1.0 / n))
}

/// Proximal penalty `mu/2 * ||theta - theta_ref||^2` summed over `pairs`.
pub fn proximal_loss<'g>(pairs: &[(Var<'g>, Var<'g>)], mu: f64) -> Option<Var<'g>> {
    pairs
        .iter()
        .map(|(p, r)| (*p - r.detach()).square().sum())
        .reduce(|a, b| a + b)
        .map(|s| s.scale(mu / 2.0))
}

/// Plain value of `delta^T K delta` averaged over rows, for tests and reports.
pub fn efm_value(delta: &Array2<f64>, e_prev: &Array2<f64>, lambda_e: f64, eta: f64) -> f64 {
    let mut kernel = e_prev * lambda_e;
    kernel.diag_mut().mapv_inplace(|v| v + eta);
    let q = (delta.dot(&kernel) * delta).sum();
    q / delta.nrows().max(1) as f64
}

//! Local trainers. All of them share one loop: shuffle the shard each epoch,
//! build the objective per mini-batch on a fresh graph, take one SGD step on
//! the current model, then fold its batch-norm statistics.

use fedgtg_autograd::{Graph, Sgd, Var};
use fedgtg_losses::{
    compose_client_objective, efm_loss, finetune_head_loss, logit_distillation_loss, masked_ce_loss, proximal_loss,
    ClientParts,
};
use fedgtg_models::{derive_seed, Mode, ModelState, SyntheticBatch, Trace, Trainable, HEAD_BIAS, HEAD_WEIGHT};
use fedgtg_server::{EpochLosses, LocalReport, PreviousTaskBundle};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{build_synthetic_batches, ClientContext, ClientError, Result};

/// A trained local model and what happened while training it.
#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub model: ModelState,
    pub report: LocalReport,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Objective<'a> {
    /// Cross-entropy with a softmax over every known class.
    Plain,
    /// Cross-entropy with a softmax over the current classes only.
    MaskedCe,
    /// Masked cross-entropy plus distillation, head fine-tuning and the
    /// feature-matrix penalty against the previous task.
    Incremental(&'a PreviousTaskBundle),
    /// Plain cross-entropy plus `mu/2 * ||theta - theta_global||^2`.
    Proximal { mu: f64 },
}

impl Objective<'_> {
    fn name(&self) -> &'static str {
        match self {
            Objective::Plain => "plain",
            Objective::MaskedCe => "masked-ce",
            Objective::Incremental(_) => "incremental",
            Objective::Proximal { .. } => "proximal",
        }
    }
}

/// Synthetic replay paired with one real batch.
pub(crate) struct Replay<'a> {
    pub images: Option<&'a SyntheticBatch>,
    pub features: Option<&'a SyntheticBatch>,
}

/// The active terms of one batch objective and the forward trace.
pub(crate) struct BatchTerms<'g> {
    pub parts: ClientParts<'g>,
    pub proximal: Option<Var<'g>>,
    pub trace: Trace<'g>,
}

impl<'g> BatchTerms<'g> {
    pub fn total(&self, hp: &fedgtg_losses::HyperParams) -> Var<'g> {
        let base = compose_client_objective(&self.parts, hp);
        match self.proximal {
            Some(p) => base + p,
            None => base,
        }
    }
}

/// Builds every active term for one real batch. Terms whose weight is zero
/// are not built at all.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_terms<'g>(
    g: &'g Graph,
    model: &ModelState,
    hp: &fedgtg_losses::HyperParams,
    binding: &fedgtg_models::Binding<'g>,
    objective: Objective<'_>,
    x: ndarray::Array4<f64>,
    labels: &[usize],
    current: &[usize],
    replay: &Replay<'_>,
    global: &ModelState,
) -> Result<BatchTerms<'g>> {
    let x = g.constant(x.into_dyn());
    let mut trace = Trace::new();
    let features = model.features(binding, x, Mode::Train, &mut trace);
    let logits = model.head(binding, features);
    let all: Vec<usize> = (0..model.n_classes()).collect();
    let mask = match objective {
        Objective::Plain | Objective::Proximal { .. } => &all[..],
        Objective::MaskedCe | Objective::Incremental(_) => current,
    };
    let mut parts = ClientParts {
        ce: masked_ce_loss(logits, labels, mask)?,
        logits: None,
        ft: None,
        efm: None,
    };
    let mut proximal = None;
    match objective {
        Objective::Incremental(bundle) => {
            let prev = &bundle.prev_global;
            let pb = prev.bind(g, Trainable::Frozen);
            if hp.lambda_efm != 0.0 {
                // Anchor features use the batch's own statistics, like the
                // current features, so the penalty is zero at the anchor.
                let anchor = prev.features(&pb, x, Mode::Train, &mut Trace::new());
                parts.efm = Some(efm_loss(features, anchor, &bundle.efm.matrix, hp.lambda_e, hp.eta)?);
            }
            if hp.lambda_logits != 0.0 {
                let syn = replay.features.ok_or_else(|| ClientError::Contract("missing feature replay".into()))?;
                let fs = g.constant(syn.payload.clone());
                parts.logits = Some(logit_distillation_loss(model.head(binding, fs), prev.head(&pb, fs))?);
            }
            if hp.lambda_ft != 0.0 {
                let syn = replay.images.ok_or_else(|| ClientError::Contract("missing image replay".into()))?;
                let fi = model.features(binding, g.constant(syn.payload.clone()), Mode::Eval, &mut Trace::new());
                parts.ft = Some(finetune_head_loss(
                    binding.var(HEAD_WEIGHT),
                    binding.var(HEAD_BIAS),
                    features,
                    labels,
                    fi,
                    &syn.labels,
                )?);
            }
        }
        Objective::Proximal { mu } if mu != 0.0 => {
            let pairs: Vec<_> = global
                .params
                .iter()
                .map(|(name, value)| (binding.var(name), g.constant(value.clone())))
                .collect();
            proximal = proximal_loss(&pairs, mu);
        }
        _ => {}
    }
    Ok(BatchTerms { parts, proximal, trace })
}

/// Shuffled mini-batches of shard positions for one epoch.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("shuffle.{epoch}"))));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[derive(Default)]
struct Sums {
    total: f64,
    ce: f64,
    logits: Option<f64>,
    ft: Option<f64>,
    efm: Option<f64>,
    proximal: Option<f64>,
}

fn bump(slot: &mut Option<f64>, v: Option<Var<'_>>) {
    if let Some(v) = v {
        *slot = Some(slot.unwrap_or(0.0) + v.item());
    }
}

fn run(ctx: &ClientContext<'_>, objective: Objective<'_>, seed: u64) -> Result<LocalOutcome> {
    ctx.validate()?;
    let global = ctx.current_model.clone();
    let mut model = ctx.current_model.clone();
    let shard = &ctx.shard.examples;
    let mut report = LocalReport {
        client_id: ctx.client_id,
        task_id: ctx.task_id,
        round_id: ctx.round_id,
        trainer: objective.name().to_string(),
        n_samples: shard.len(),
        empty_shard: shard.is_empty(),
        epochs: Vec::new(),
    };
    if shard.is_empty() {
        return Ok(LocalOutcome { model, report });
    }
    let labels = model.head_positions(&shard.labels)?;
    let current = model.head_positions(&ctx.current_classes)?;
    let opt = Sgd::new(ctx.local.lr, ctx.local.weight_decay);

    for epoch in 0..ctx.local.epochs {
        let batches = epoch_batches(shard.len(), ctx.local.batch_size, seed, epoch);
        let (syn_images, syn_features) = match objective {
            Objective::Incremental(b) if ctx.hp.lambda_ft != 0.0 || ctx.hp.lambda_logits != 0.0 => {
                build_synthetic_batches(
                    &b.data_gen,
                    &b.feat_gen,
                    b.prev_global.n_classes(),
                    ctx.local.synthetic_batch_size,
                    batches.len(),
                    derive_seed(seed, &format!("synthetic.{epoch}")),
                )?
            }
            _ => (Vec::new(), Vec::new()),
        };
        let mut sums = Sums::default();
        for (i, positions) in batches.iter().enumerate() {
            let batch_labels: Vec<usize> = positions.iter().map(|&p| labels[p]).collect();
            let replay = Replay {
                images: syn_images.get(i),
                features: syn_features.get(i),
            };
            let g = Graph::new();
            let binding = model.bind(&g, Trainable::All);
            let terms = batch_terms(
                &g,
                &model,
                &ctx.hp,
                &binding,
                objective,
                shard.batch(positions),
                &batch_labels,
                &current,
                &replay,
                &global,
            )?;
            let loss = terms.total(&ctx.hp);
            let value = loss.item();
            if !value.is_finite() {
                return Err(ClientError::Diverged {
                    epoch,
                    batch: i,
                    loss: value,
                });
            }
            sums.total += value;
            sums.ce += terms.parts.ce.item();
            bump(&mut sums.logits, terms.parts.logits);
            bump(&mut sums.ft, terms.parts.ft);
            bump(&mut sums.efm, terms.parts.efm);
            bump(&mut sums.proximal, terms.proximal);
            let grads = binding.gradients(&g.backward(loss));
            model.sgd_step(&opt, &grads);
            model.absorb(&terms.trace);
        }
        let n = batches.len() as f64;
        let mean = |v: Option<f64>| v.map(|s| s / n);
        report.epochs.push(EpochLosses {
            epoch,
            batches: batches.len(),
            total: sums.total / n,
            ce: sums.ce / n,
            logits: mean(sums.logits),
            ft: mean(sums.ft),
            efm: mean(sums.efm),
            proximal: mean(sums.proximal),
        });
    }
    Ok(LocalOutcome { model, report })
}

/// Plain supervised training for the first task.
pub fn local_train_first_task(ctx: &ClientContext<'_>, seed: u64) -> Result<LocalOutcome> {
    if ctx.task_id != 1 {
        return Err(ClientError::Contract(format!("task {} is not the first task", ctx.task_id)));
    }
    run(ctx, Objective::Plain, seed)
}

/// Plain supervised training over every known class, on any task.
pub fn local_train_fedavg(ctx: &ClientContext<'_>, seed: u64) -> Result<LocalOutcome> {
    run(ctx, Objective::Plain, seed)
}

/// Cross-entropy restricted to the current classes, nothing else.
pub fn local_train_masked_ce(ctx: &ClientContext<'_>, seed: u64) -> Result<LocalOutcome> {
    run(ctx, Objective::MaskedCe, seed)
}

/// Incremental training on masked cross-entropy, logit distillation on
/// synthetic features, head fine-tuning on real and synthetic images, and
/// the feature-matrix penalty, each weighted by `ctx.hp`.
///
/// With every auxiliary weight at zero the parameter trajectory is
/// bit-identical to [`local_train_masked_ce`] under the same seed.
pub fn local_train_incremental(ctx: &ClientContext<'_>, seed: u64) -> Result<LocalOutcome> {
    if ctx.task_id < 2 {
        return Err(ClientError::Contract("incremental training starts at task 2".into()));
    }
    run(ctx, Objective::Incremental(ctx.bundle()?), seed)
}

/// Plain training plus a proximal pull towards the broadcast weights.
pub fn local_train_fedprox(ctx: &ClientContext<'_>, mu: f64, seed: u64) -> Result<LocalOutcome> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(ClientError::Config(format!("proximal weight {mu} must be finite and non-negative")));
    }
    run(ctx, Objective::Proximal { mu }, seed)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use fedgtg_data::{ClientShard, ImageSet};
    use fedgtg_models::{ArchConfig, GeneratorConfig, GeneratorState};
    use fedgtg_server::compute_efm;

    use crate::LocalConfig;
    use ndarray::Array4;
    use rand::Rng;

    use super::*;

    /// Class `classes[k]` lights up horizontal band `k` of the image.
    pub fn banded_shard(classes: &[usize], per_class: usize, task_id: usize, seed: u64) -> ClientShard {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = classes.len() * per_class;
        let labels: Vec<usize> = (0..n).map(|i| classes[i % classes.len()]).collect();
        let band = 8 / classes.len().max(1);
        let images = Array4::from_shape_fn((n, 3, 8, 8), |(i, _, h, _)| {
            let k = i % classes.len();
            let on = h / band.max(1) == k;
            (if on { 1.0 } else { -0.5 }) + rng.random_range(-0.3f32..0.3)
        });
        let examples = ImageSet::new(images, labels);
        ClientShard {
            client_id: 0,
            task_id,
            positions: (0..n).collect(),
            examples,
        }
    }

    pub fn arch() -> ArchConfig {
        ArchConfig::small_cnn([3, 8, 8], vec![4], 8)
    }

    pub fn local(epochs: usize) -> LocalConfig {
        LocalConfig {
            epochs,
            batch_size: 8,
            synthetic_batch_size: 8,
            lr: 0.05,
            weight_decay: 0.0,
        }
    }

    /// Artifacts of a 2-class first task with untrained generators.
    pub fn bundle(seed: u64) -> PreviousTaskBundle {
        let prev = ModelState::init_backbone(&arch(), &[0, 1], seed).unwrap();
        let cfg = GeneratorConfig {
            noise_dim: Some(6),
            base_channels: 4,
            hidden: 8,
            ..Default::default()
        };
        let data_gen = GeneratorState::init_data_generator(&cfg, &prev, seed ^ 1).unwrap();
        let feat_gen = GeneratorState::init_feature_generator(&cfg, &prev, seed ^ 2).unwrap();
        let efm = compute_efm(&feat_gen, &prev, 32, 1, seed ^ 3).unwrap();
        PreviousTaskBundle {
            prev_global: prev,
            data_gen,
            feat_gen,
            efm,
        }
    }

    pub fn ctx<'a>(
        shard: &'a ClientShard,
        model: ModelState,
        current: &[usize],
        previous: Option<&'a PreviousTaskBundle>,
        hp: fedgtg_losses::HyperParams,
        local: LocalConfig,
    ) -> ClientContext<'a> {
        ClientContext {
            client_id: 0,
            task_id: shard.task_id,
            round_id: 0,
            shard,
            current_model: model,
            current_classes: current.to_vec(),
            previous,
            hp,
            local,
        }
    }
}

//! End-of-task training of the data and feature generators against the
//! frozen global model.

use fedgtg_autograd::{Adam, Graph};
use fedgtg_losses::{
    batchnorm_loss, compose_feature_generator_objective, compose_generator_objective, feature_ce_loss,
    feature_ie_loss, generator_ce_loss, information_entropy_loss, smoothing_prior_loss, FeatureGeneratorParts,
    GeneratorParts, HyperParams,
};
use fedgtg_models::{
    derive_seed, sample_noise_labels, GeneratorConfig, GeneratorState, Mode, ModelState, Trace, Trainable,
};
use serde::{Deserialize, Serialize};

use crate::{Result, ServerError};

/// Optimization budget shared by both generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorBudget {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for GeneratorBudget {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

impl GeneratorBudget {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ServerError::Config(format!("invalid generator budget {self:?}")));
        }
        Ok(())
    }
}

/// A trained generator with its loss trajectory (one entry per step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedGenerator {
    pub generator: GeneratorState,
    pub losses: Vec<f64>,
}

/// Head positions split into the last task's classes and the current ones;
/// the current classes are the trailing `n_current` rows.
fn split_positions(q: usize, n_current: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_current == 0 || n_current > q {
        return Err(ServerError::Contract(format!("{n_current} current classes of {q}")));
    }
    Ok(((0..q - n_current).collect(), (q - n_current..q).collect()))
}

fn guard(which: &'static str, step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(ServerError::Diverged { which, step, loss })
    }
}

/// Trains a freshly initialized data generator on
/// `CE + l_ie * IE + l_batch * BN-KL + l_smooth * smoothness`, with the
/// teacher's batch-norm layers measured in eval mode.
pub fn train_data_generator(
    global: &ModelState,
    cfg: &GeneratorConfig,
    budget: &GeneratorBudget,
    hp: &HyperParams,
    n_current: usize,
    seed: u64,
) -> Result<TrainedGenerator> {
    budget.validate()?;
    let q = global.n_classes();
    let (last, current) = split_positions(q, n_current)?;
    let mut gen = GeneratorState::init_data_generator(cfg, global, derive_seed(seed, "data_gen.init"))?;
    let stored = global.bn_statistics();
    let mut opt = Adam::new(budget.lr);
    let mut losses = Vec::with_capacity(budget.steps);
    for step in 0..budget.steps {
        let step_seed = derive_seed(seed, &format!("data_gen.step.{step}"));
        let (noise, labels) = sample_noise_labels(budget.batch_size, q, gen.noise_dim, step_seed)?;
        let g = Graph::new();
        let gb = gen.bind(&g, true);
        let mut gen_trace = Trace::new();
        let images = gen.forward(&gb, g.constant(noise.into_dyn()), Mode::Train, &mut gen_trace);
        let tb = global.bind(&g, Trainable::Frozen);
        let mut teacher_trace = Trace::capturing();
        let logits = global.head(&tb, global.features(&tb, images, Mode::Eval, &mut teacher_trace));
        let measured: Vec<_> = teacher_trace.stats.iter().map(|s| (s.mean, s.var)).collect();
        let parts = GeneratorParts {
            ce: generator_ce_loss(logits, &labels, &last, &current, hp.lambda_current)?,
            ie: Some(information_entropy_loss(logits.softmax())?),
            batch: Some(batchnorm_loss(&stored, &measured)?),
            smooth: Some(smoothing_prior_loss(images)),
        };
        let loss = compose_generator_objective(&parts, hp);
        guard("data generator", step, loss.item())?;
        losses.push(loss.item());
        let grads = gb.gradients(&g.backward(loss));
        opt.step(&mut gen.params, &grads);
        fedgtg_models::apply_running_updates(&mut gen.buffers, &gen_trace.updates);
    }
    Ok(TrainedGenerator { generator: gen, losses })
}

/// Trains a freshly initialized feature generator on `CE + l_fie * IE`
/// through the frozen head only.
pub fn train_feature_generator(
    global: &ModelState,
    cfg: &GeneratorConfig,
    budget: &GeneratorBudget,
    hp: &HyperParams,
    n_current: usize,
    seed: u64,
) -> Result<TrainedGenerator> {
    budget.validate()?;
    let q = global.n_classes();
    let (last, current) = split_positions(q, n_current)?;
    let mut gen = GeneratorState::init_feature_generator(cfg, global, derive_seed(seed, "feat_gen.init"))?;
    let mut opt = Adam::new(budget.lr);
    let mut losses = Vec::with_capacity(budget.steps);
    for step in 0..budget.steps {
        let step_seed = derive_seed(seed, &format!("feat_gen.step.{step}"));
        let (noise, labels) = sample_noise_labels(budget.batch_size, q, gen.noise_dim, step_seed)?;
        let g = Graph::new();
        let gb = gen.bind(&g, true);
        let features = gen.forward(&gb, g.constant(noise.into_dyn()), Mode::Train, &mut Trace::new());
        let tb = global.bind(&g, Trainable::Frozen);
        let logits = global.head(&tb, features);
        let parts = FeatureGeneratorParts {
            ce: feature_ce_loss(logits, &labels, &last, &current, hp.lambda_current)?,
            ie: Some(feature_ie_loss(logits.softmax())?),
        };
        let loss = compose_feature_generator_objective(&parts, hp);
        guard("feature generator", step, loss.item())?;
        losses.push(loss.item());
        let grads = gb.gradients(&g.backward(loss));
        opt.step(&mut gen.params, &grads);
    }
    Ok(TrainedGenerator { generator: gen, losses })
}

/// Fraction of generated samples the teacher assigns to their noise label.
pub fn teacher_agreement(trained: &GeneratorState, n: usize, seed: u64) -> Result<f64> {
    let batch = trained.sample(n, seed)?;
    let teacher = &trained.teacher;
    let logits = match batch.payload.ndim() {
        4 => teacher.logits(&batch.payload.clone().into_dimensionality().unwrap())?,
        _ => teacher.forward_head(&batch.payload.clone().into_dimensionality().unwrap(), None)?.logits,
    };
    let hits = logits
        .outer_iter()
        .zip(&batch.labels)
        .filter(|(row, &label)| {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
            best == label
        })
        .count();
    Ok(hits as f64 / n.max(1) as f64)
}

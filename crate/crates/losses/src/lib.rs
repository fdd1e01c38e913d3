//! Every objective used to train the twin generators and the clients.
//!
//! Losses are functions of [`fedgtg_autograd::Var`]s and return a scalar
//! `Var`, so gradients come from the tape. All batch reductions are means.
//! Class arguments are head positions, not dataset class ids.

mod client;
mod compose;
mod generator;
mod hyper;

pub use client::{efm_loss, efm_value, finetune_head_loss, logit_distillation_loss, masked_ce_loss, proximal_loss};
pub use compose::{
    compose_client_objective, compose_feature_generator_objective, compose_generator_objective, ClientParts,
    FeatureGeneratorParts, GeneratorParts,
};
pub use generator::{
    batchnorm_loss, feature_ce_loss, feature_ie_loss, gaussian_kernel3, generator_ce_loss, information_entropy_loss,
    smoothing_prior_loss,
};
pub use hyper::HyperParams;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric guard: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = LossError> = std::result::Result<T, E>;

use serde::{Deserialize, Serialize};

use crate::{LossError, Result};

/// Loss weights shared by the generators and the clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Weight of the current-class cross-entropy in both generator objectives.
    pub lambda_current: f64,
    pub lambda_ie: f64,
    pub lambda_batch: f64,
    pub lambda_smooth: f64,
    pub lambda_fie: f64,
    pub lambda_ft: f64,
    pub lambda_logits: f64,
    pub lambda_efm: f64,
    /// Scale of the feature matrix inside the drift penalty.
    pub lambda_e: f64,
    /// Isotropic damping of the drift penalty.
    pub eta: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda_current: 1.5,
            lambda_ie: 1.0,
            lambda_batch: 1.0,
            lambda_smooth: 1.0,
            lambda_fie: 1.0,
            lambda_ft: 1.0,
            lambda_logits: 0.1,
            lambda_efm: 0.005,
            lambda_e: 10.0,
            eta: 0.1,
        }
    }
}

impl HyperParams {
    /// CIFAR-10 and CIFAR-100 settings.
    pub fn cifar() -> Self {
        Self::default()
    }

    /// tiny-ImageNet settings.
    pub fn tiny_imagenet() -> Self {
        Self {
            lambda_current: 2.0,
            lambda_logits: 0.05,
            ..Self::default()
        }
    }

    pub fn named(&self) -> [(&'static str, f64); 10] {
        [
            ("lambda_current", self.lambda_current),
            ("lambda_ie", self.lambda_ie),
            ("lambda_batch", self.lambda_batch),
            ("lambda_smooth", self.lambda_smooth),
            ("lambda_fie", self.lambda_fie),
            ("lambda_ft", self.lambda_ft),
            ("lambda_logits", self.lambda_logits),
            ("lambda_efm", self.lambda_efm),
            ("lambda_e", self.lambda_e),
            ("eta", self.eta),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LossError::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.lambda_efm > 0.0 && self.eta <= 0.0 {
            return Err(LossError::Config(
                "eta must be positive while lambda_efm > 0 (the penalty kernel must stay positive definite)".into(),
            ));
        }
        Ok(())
    }
}

//! First-order optimizers over named parameter maps.

use std::collections::BTreeMap;

use crate::Tensor;

/// Named parameter (or gradient) collection, iterated in key order.
pub type ParamMap = BTreeMap<String, Tensor>;

/// Plain stochastic gradient descent with decoupled-free L2 weight decay:
/// `p <- p - lr * (g + weight_decay * p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay }
    }

    /// Parameters without an entry in `grads` are still decayed.
    pub fn step(&self, params: &mut ParamMap, grads: &ParamMap) {
        for (name, p) in params.iter_mut() {
            match grads.get(name) {
                Some(g) => {
                    ndarray::Zip::from(p.view_mut())
                        .and(g)
                        .for_each(|p, &g| *p -= self.lr * (g + self.weight_decay * *p));
                }
                None if self.weight_decay != 0.0 => {
                    p.mapv_inplace(|v| v - self.lr * self.weight_decay * v);
                }
                None => {}
            }
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Parameters without an entry in `grads` are left untouched.
    pub fn step(&mut self, params: &mut ParamMap, grads: &ParamMap) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(p.raw_dim()), Tensor::zeros(p.raw_dim())));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            ndarray::Zip::from(p.view_mut())
                .and(g)
                .and(m.view_mut())
                .and(v.view_mut())
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

//! A small layer language and its interpreter on the autodiff tape.
//!
//! Architectures are plain `Vec<Layer>` values. Parameters live outside the
//! layers in a [`ParamMap`] keyed by `"{layer}.{weight|bias}"`; batch-norm
//! running statistics live in a second map keyed by
//! `"{layer}.running_mean"` / `"{layer}.running_var"`.

use std::collections::BTreeMap;

use fedgtg_autograd::{Gradients, Graph, ParamMap, Tensor, Var};
use ndarray::{Array1, IxDyn};

use crate::init::Init;

/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running averages.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    BatchNorm {
        name: String,
        channels: usize,
    },
    Linear {
        name: String,
        in_dim: usize,
        out_dim: usize,
    },
    Relu,
    LeakyRelu(f64),
    /// `scale * tanh(x)`.
    Tanh(f64),
    MaxPool2,
    GlobalAvgPool,
    Flatten,
    /// Per-sample target shape; the batch axis is kept.
    Reshape(Vec<usize>),
    Upsample2,
    /// `body(x) + shortcut(x)`; an empty shortcut is the identity.
    Residual {
        body: Vec<Layer>,
        shortcut: Vec<Layer>,
    },
}

/// A parameter or buffer the architecture expects to find.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Declarations {
    pub params: Vec<TensorDecl>,
    pub buffers: Vec<TensorDecl>,
    /// Batch-norm layer names in forward order.
    pub batch_norms: Vec<String>,
}

impl Declarations {
    pub fn of(layers: &[Layer]) -> Self {
        let mut d = Self::default();
        d.walk(layers);
        d
    }

    fn param(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.params.push(TensorDecl { name, shape, init });
    }

    fn walk(&mut self, layers: &[Layer]) {
        for layer in layers {
            match layer {
                Layer::Conv {
                    name,
                    in_ch,
                    out_ch,
                    kernel,
                    bias,
                    ..
                } => {
                    let fan_in = in_ch * kernel * kernel;
                    self.param(format!("{name}.weight"), vec![*out_ch, *in_ch, *kernel, *kernel], Init::He { fan_in });
                    if *bias {
                        self.param(format!("{name}.bias"), vec![*out_ch], Init::Zeros);
                    }
                }
                Layer::BatchNorm { name, channels } => {
                    self.param(format!("{name}.weight"), vec![*channels], Init::Ones);
                    self.param(format!("{name}.bias"), vec![*channels], Init::Zeros);
                    self.buffers.push(TensorDecl {
                        name: format!("{name}.running_mean"),
                        shape: vec![*channels],
                        init: Init::Zeros,
                    });
                    self.buffers.push(TensorDecl {
                        name: format!("{name}.running_var"),
                        shape: vec![*channels],
                        init: Init::Ones,
                    });
                    self.batch_norms.push(name.clone());
                }
                Layer::Linear { name, in_dim, out_dim } => {
                    self.param(format!("{name}.weight"), vec![*out_dim, *in_dim], Init::He { fan_in: *in_dim });
                    self.param(format!("{name}.bias"), vec![*out_dim], Init::Zeros);
                }
                Layer::Residual { body, shortcut } => {
                    self.walk(body);
                    self.walk(shortcut);
                }
                _ => {}
            }
        }
    }

    /// Freshly initialized `(params, buffers)`.
    pub fn materialize(&self, seed: u64) -> (ParamMap, ParamMap) {
        let build = |decls: &[TensorDecl]| {
            decls
                .iter()
                .map(|d| (d.name.clone(), d.init.sample(&d.shape, seed, &d.name)))
                .collect::<ParamMap>()
        };
        (build(&self.params), build(&self.buffers))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm normalizes with batch statistics and records running updates.
    Train,
    /// Batch-norm normalizes with running statistics.
    Eval,
}

/// Differentiable per-channel statistics of one batch-norm layer's input.
#[derive(Debug, Clone, Copy)]
pub struct BnStat<'g> {
    pub mean: Var<'g>,
    /// Biased (population) variance.
    pub var: Var<'g>,
}

/// Batch statistics awaiting [`apply_running_updates`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunningUpdate {
    pub layer: String,
    pub mean: Tensor,
    /// Unbiased variance.
    pub var: Tensor,
}

/// Side outputs of one forward pass.
#[derive(Debug, Default)]
pub struct Trace<'g> {
    capture_stats: bool,
    /// One entry per batch-norm layer, in forward order. Always filled in
    /// train mode; filled in eval mode only when capturing.
    pub stats: Vec<BnStat<'g>>,
    pub updates: Vec<RunningUpdate>,
}

impl<'g> Trace<'g> {
    pub fn new() -> Self {
        Self::default()
    }

    /// A trace that also records batch statistics in eval mode.
    pub fn capturing() -> Self {
        Self {
            capture_stats: true,
            ..Self::default()
        }
    }
}

/// Folds recorded batch statistics into `buffers`, in order.
pub fn apply_running_updates(buffers: &mut ParamMap, updates: &[RunningUpdate]) {
    for u in updates {
        for (suffix, batch) in [("running_mean", &u.mean), ("running_var", &u.var)] {
            let key = format!("{}.{suffix}", u.layer);
            let running = buffers.get_mut(&key).unwrap_or_else(|| panic!("missing buffer {key}"));
            running.zip_mut_with(batch, |r, &b| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b);
        }
    }
}

/// Parameters placed on a graph, either as trainable leaves or as constants.
pub struct Binding<'g> {
    graph: &'g Graph,
    vars: BTreeMap<String, Var<'g>>,
    trainable: Vec<String>,
}

impl<'g> Binding<'g> {
    pub fn new(graph: &'g Graph, params: &ParamMap, trainable: impl Fn(&str) -> bool) -> Self {
        let mut vars = BTreeMap::new();
        let mut names = Vec::new();
        for (name, value) in params {
            let var = if trainable(name) {
                names.push(name.clone());
                graph.param(value.clone())
            } else {
                graph.constant(value.clone())
            };
            vars.insert(name.clone(), var);
        }
        Self {
            graph,
            vars,
            trainable: names,
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn var(&self, name: &str) -> Var<'g> {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn trainable_names(&self) -> &[String] {
        &self.trainable
    }

    /// Gradients of every trainable parameter (zeros where no path exists).
    pub fn gradients(&self, grads: &Gradients) -> ParamMap {
        self.trainable
            .iter()
            .map(|n| (n.clone(), grads.get_or_zeros(self.vars[n])))
            .collect()
    }
}

fn batch_norm<'g>(
    x: Var<'g>,
    name: &str,
    p: &Binding<'g>,
    buffers: &ParamMap,
    mode: Mode,
    trace: &mut Trace<'g>,
) -> Var<'g> {
    let g = p.graph();
    let gamma = p.var(&format!("{name}.weight"));
    let beta = p.var(&format!("{name}.bias"));
    let normalized = if mode == Mode::Train || trace.capture_stats {
        let mean = x.channel_mean();
        let centered = x.sub_channel(&mean);
        let var = centered.square().channel_mean();
        trace.stats.push(BnStat { mean, var });
        if mode == Mode::Train {
            let shape = x.shape();
            let n = shape.iter().product::<usize>() / shape[1];
            let correction = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            trace.updates.push(RunningUpdate {
                layer: name.to_string(),
                mean: (*mean.value()).clone(),
                var: &*var.value() * correction,
            });
            centered.mul_channel(&var.add_scalar(BN_EPS).powf(-0.5))
        } else {
            running_normalize(x, name, buffers, g)
        }
    } else {
        running_normalize(x, name, buffers, g)
    };
    normalized.mul_channel(&gamma).add_channel(&beta)
}

fn running_normalize<'g>(x: Var<'g>, name: &str, buffers: &ParamMap, g: &'g Graph) -> Var<'g> {
    let rm = &buffers[&format!("{name}.running_mean")];
    let rv = &buffers[&format!("{name}.running_var")];
    let inv_std: Array1<f64> = rv.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    x.sub_channel(&g.constant(rm.clone()))
        .mul_channel(&g.constant(inv_std.into_dyn()))
}

/// Runs `layers` on `x`.
pub fn forward<'g>(
    layers: &[Layer],
    mut x: Var<'g>,
    p: &Binding<'g>,
    buffers: &ParamMap,
    mode: Mode,
    trace: &mut Trace<'g>,
) -> Var<'g> {
    let g = p.graph();
    for layer in layers {
        x = match layer {
            Layer::Conv {
                name,
                out_ch,
                stride,
                padding,
                bias,
                ..
            } => {
                let b = if *bias {
                    p.var(&format!("{name}.bias"))
                } else {
                    g.constant(Tensor::zeros(IxDyn(&[*out_ch])))
                };
                x.conv2d(&p.var(&format!("{name}.weight")), &b, *stride, *padding)
            }
            Layer::BatchNorm { name, .. } => batch_norm(x, name, p, buffers, mode, trace),
            Layer::Linear { name, .. } => {
                x.linear(&p.var(&format!("{name}.weight")), &p.var(&format!("{name}.bias")))
            }
            Layer::Relu => x.relu(),
            Layer::LeakyRelu(slope) => x.leaky_relu(*slope),
            Layer::Tanh(scale) => x.tanh().scale(*scale),
            Layer::MaxPool2 => x.max_pool2(),
            Layer::GlobalAvgPool => x.global_avg_pool(),
            Layer::Flatten => {
                let s = x.shape();
                x.reshape(&[s[0], s[1..].iter().product()])
            }
            Layer::Reshape(per_sample) => {
                let mut shape = vec![x.shape()[0]];
                shape.extend_from_slice(per_sample);
                x.reshape(&shape)
            }
            Layer::Upsample2 => x.upsample2(),
            Layer::Residual { body, shortcut } => {
                let main = forward(body, x, p, buffers, mode, trace);
                let side = forward(shortcut, x, p, buffers, mode, trace);
                main + side
            }
        };
    }
    x
}

#[cfg(test)]
mod tests {
    use ndarray::Array4;

    use super::*;

    fn bn_net() -> Vec<Layer> {
        vec![Layer::BatchNorm {
            name: "bn".into(),
            channels: 2,
        }]
    }

    #[test]
    fn train_mode_normalizes_with_batch_statistics() {
        let layers = bn_net();
        let (params, buffers) = Declarations::of(&layers).materialize(0);
        let g = Graph::new();
        let b = Binding::new(&g, &params, |_| false);
        let x = Array4::from_shape_fn((4, 2, 1, 1), |(n, c, _, _)| (n as f64) * (c as f64 + 1.0)).into_dyn();
        let mut trace = Trace::new();
        let y = forward(&layers, g.constant(x), &b, &buffers, Mode::Train, &mut trace);
        let y = y.value();
        for c in 0..2 {
            let lane: Vec<f64> = (0..4).map(|n| y[[n, c, 0, 0]]).collect();
            let m = lane.iter().sum::<f64>() / 4.0;
            let v = lane.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
        assert_eq!(trace.stats.len(), 1);
        assert_eq!(trace.updates.len(), 1);
    }

    #[test]
    fn running_update_follows_momentum_formula() {
        let layers = bn_net();
        let (params, mut buffers) = Declarations::of(&layers).materialize(0);
        let g = Graph::new();
        let b = Binding::new(&g, &params, |_| false);
        let x = Tensor::from_elem(IxDyn(&[3, 2, 2, 2]), 4.0);
        let mut trace = Trace::new();
        forward(&layers, g.constant(x), &b, &buffers, Mode::Train, &mut trace);
        apply_running_updates(&mut buffers, &trace.updates);
        // Constant batch: mean 4, variance 0.
        assert!(buffers["bn.running_mean"].iter().all(|&m| (m - 0.4).abs() < 1e-15));
        assert!(buffers["bn.running_var"].iter().all(|&v| (v - 0.9).abs() < 1e-15));
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let layers = bn_net();
        let (params, mut buffers) = Declarations::of(&layers).materialize(0);
        buffers.insert("bn.running_mean".into(), ndarray::arr1(&[1.0, -1.0]).into_dyn());
        buffers.insert("bn.running_var".into(), ndarray::arr1(&[4.0, 1.0]).into_dyn());
        let g = Graph::new();
        let b = Binding::new(&g, &params, |_| false);
        let x = Tensor::from_elem(IxDyn(&[1, 2, 1, 1]), 3.0);
        let y = forward(&layers, g.constant(x), &b, &buffers, Mode::Eval, &mut Trace::new());
        let y = y.value();
        assert!((y[[0, 0, 0, 0]] - 2.0 / (4.0 + BN_EPS).sqrt()).abs() < 1e-12);
        assert!((y[[0, 1, 0, 0]] - 4.0 / (1.0 + BN_EPS).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn residual_identity_shortcut_adds_input() {
        let layers = vec![Layer::Residual {
            body: vec![Layer::Relu],
            shortcut: vec![],
        }];
        let g = Graph::new();
        let b = Binding::new(&g, &ParamMap::new(), |_| false);
        let x = ndarray::arr2(&[[-1.0, 2.0]]).into_dyn();
        let y = forward(&layers, g.constant(x), &b, &ParamMap::new(), Mode::Eval, &mut Trace::new());
        assert_eq!(y.value().iter().copied().collect::<Vec<_>>(), vec![-1.0, 4.0]);
    }
}

//! Central finite-difference gradient checking.

use crate::{Graph, Tensor, Var};

/// Outcome of [`check_gradient`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)`.
    pub relative_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Compares the tape gradient of `f` at `x` with central differences.
///
/// `f` builds a scalar from a single trainable input. Each input element is
/// perturbed by `±step` and the loss re-evaluated on a fresh graph.
pub fn check_gradient<F>(x: &Tensor, step: f64, f: F) -> GradCheck
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Var<'g>,
{
    let analytic = {
        let g = Graph::new();
        let v = g.param(x.clone());
        let loss = f(&g, v);
        g.backward(loss).get_or_zeros(v)
    };
    let eval = |t: Tensor| {
        let g = Graph::new();
        let v = g.param(t);
        f(&g, v).item()
    };
    let mut numeric = Tensor::zeros(x.raw_dim());
    for (i, slot) in numeric.iter_mut().enumerate() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        *plus.iter_mut().nth(i).unwrap() += step;
        *minus.iter_mut().nth(i).unwrap() -= step;
        *slot = (eval(plus) - eval(minus)) / (2.0 * step);
    }
    let diff = (&analytic - &numeric).mapv(|v| v * v).sum().sqrt();
    let an = analytic.mapv(|v| v * v).sum().sqrt();
    let nn = numeric.mapv(|v| v * v).sum().sqrt();
    let denom = an.max(nn);
    GradCheck {
        relative_error: if denom == 0.0 { 0.0 } else { diff / denom },
        analytic_norm: an,
        numeric_norm: nn,
    }
}

#[cfg(test)]
mod tests {
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
    }

    fn weights(shape: &[usize], seed: u64) -> Tensor {
        random(shape, seed ^ 0xABCD)
    }

    fn assert_ok<F>(x: &Tensor, f: F)
    where
        F: for<'g> Fn(&'g Graph, Var<'g>) -> Var<'g>,
    {
        let r = check_gradient(x, 1e-3, f);
        assert!(r.relative_error < 1e-5, "{r:?}");
        assert!(r.analytic_norm > 0.0, "{r:?}");
    }

    #[test]
    fn elementwise_ops() {
        let x = random(&[3, 4], 1);
        let w = weights(&[3, 4], 1);
        assert_ok(&x, |g, v| (v * g.constant(w.clone())).tanh().sum());
        assert_ok(&x, |_, v| v.square().exp().mean());
        assert_ok(&x, |_, v| v.add_scalar(2.0).ln().sum());
        assert_ok(&x, |_, v| v.add_scalar(2.0).powf(-0.5).sum());
        assert_ok(&x, |g, v| v.leaky_relu(0.2).mul(&g.constant(w.clone())).sum());
        assert_ok(&x, |g, v| g.constant(w.mapv(|a| a + 3.0)).div(&v.add_scalar(3.0)).sum());
        assert_ok(&x, |_, v| v.square().add_scalar(0.1).xlogx().sum());
    }

    #[test]
    fn dense_and_softmax_ops() {
        let x = random(&[4, 3], 2);
        let w = weights(&[5, 3], 2);
        let b = weights(&[5], 3);
        let t = weights(&[4, 5], 4);
        assert_ok(&x, |g, v| {
            v.linear(&g.constant(w.clone()), &g.constant(b.clone()))
                .log_softmax()
                .mul(&g.constant(t.clone()))
                .sum()
        });
        assert_ok(&w, |g, v| {
            g.constant(x.clone())
                .linear(&v, &g.constant(b.clone()))
                .softmax()
                .mul(&g.constant(t.clone()))
                .sum()
        });
        assert_ok(&b, |g, v| {
            g.constant(x.clone())
                .linear(&g.constant(w.clone()), &v)
                .pick(&[0, 4, 2, 2])
                .square()
                .sum()
        });
        assert_ok(&x, |g, v| v.matmul(&g.constant(w.t().to_owned().into_dyn())).square().sum());
        assert_ok(&x, |_, v| v.select_cols(&[2, 0]).select_rows(&[3, 1, 3]).square().sum());
        assert_ok(&x, |g, v| v.concat_rows(&g.constant(x.clone())).channel_mean().square().sum());
    }

    #[test]
    fn channel_ops() {
        let x = random(&[2, 3, 2, 2], 5);
        let v3 = weights(&[3], 5);
        let t = weights(&[2, 3, 2, 2], 6);
        assert_ok(&x, |g, v| {
            let m = v.channel_mean();
            let c = v.sub_channel(&m);
            let var = c.square().channel_mean();
            c.mul_channel(&var.add_scalar(1e-5).powf(-0.5))
                .add_channel(&g.constant(v3.clone()))
                .mul(&g.constant(t.clone()))
                .sum()
        });
        assert_ok(&v3, |g, v| {
            g.constant(x.clone())
                .mul_channel(&v)
                .sub_channel(&v.square())
                .mul(&g.constant(t.clone()))
                .sum()
        });
    }

    #[test]
    fn spatial_ops() {
        let x = random(&[2, 2, 4, 4], 7);
        let w = weights(&[3, 2, 3, 3], 7);
        let b = weights(&[3], 8);
        for &(stride, pad) in &[(1, 1), (2, 1)] {
            let tshape = {
                let o = (4 + 2 * pad - 3) / stride + 1;
                [2, 3, o, o]
            };
            let t = weights(&tshape, 9);
            assert_ok(&x, |g, v| {
                v.conv2d(&g.constant(w.clone()), &g.constant(b.clone()), stride, pad)
                    .mul(&g.constant(t.clone()))
                    .sum()
            });
            assert_ok(&w, |g, v| {
                g.constant(x.clone())
                    .conv2d(&v, &g.constant(b.clone()), stride, pad)
                    .mul(&g.constant(t.clone()))
                    .sum()
            });
            assert_ok(&b, |g, v| {
                g.constant(x.clone())
                    .conv2d(&g.constant(w.clone()), &v, stride, pad)
                    .square()
                    .sum()
            });
        }
        let t8 = weights(&[2, 2, 8, 8], 10);
        assert_ok(&x, |g, v| v.upsample2().mul(&g.constant(t8.clone())).sum());
        let t2 = weights(&[2, 2, 2, 2], 11);
        assert_ok(&x, |g, v| v.max_pool2().mul(&g.constant(t2.clone())).sum());
        assert_ok(&x, |_, v| v.global_avg_pool().square().sum());
        let blur = [[0.05, 0.1, 0.05], [0.1, 0.4, 0.1], [0.05, 0.1, 0.05]];
        let t4 = weights(&[2, 2, 4, 4], 12);
        assert_ok(&x, |g, v| v.filter3x3_reflect(blur).mul(&g.constant(t4.clone())).sum());
        assert_ok(&x, |_, v| v.reshape(&[2, 32]).log_softmax().pick(&[3, 17]).sum());
    }
}

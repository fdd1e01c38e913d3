use std::ops::{Add, Mul, Neg, Sub};

use ndarray::{s, Array1, Array2, ArrayD, Axis, Ix2, IxDyn, Zip};

use crate::graph::Var;
use crate::Tensor;

fn as2(t: &Tensor) -> ndarray::ArrayView2<'_, f64> {
    t.view()
        .into_dimensionality::<Ix2>()
        .expect("expected a rank-2 tensor")
}

fn same_shape(a: &Var<'_>, b: &Var<'_>, op: &str) {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa, sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
}

/// Sum of `t` over every axis except axis 1, giving one value per channel.
fn reduce_to_channels(t: &Tensor) -> Tensor {
    let c = t.shape()[1];
    let mut out = Array1::<f64>::zeros(c);
    for (i, lane) in t.axis_iter(Axis(1)).enumerate() {
        out[i] = lane.sum();
    }
    out.into_dyn()
}

/// Broadcast a per-channel vector against axis 1 of `shape`.
fn channel_view(v: &Tensor, ndim: usize) -> ArrayD<f64> {
    let c = v.len();
    let mut shape = vec![1; ndim];
    shape[1] = c;
    v.view().into_shape_with_order(IxDyn(&shape)).unwrap().to_owned()
}

fn check_channel_operand(x: &Var<'_>, v: &Var<'_>, op: &str) {
    let xs = x.shape();
    let vs = v.shape();
    assert!(xs.len() >= 2, "{op}: input must have a channel axis");
    assert_eq!(vs, vec![xs[1]], "{op}: expected per-channel vector of {}", xs[1]);
}

impl<'g> Var<'g> {
    fn unary<F, B>(&self, forward: F, backward: B) -> Var<'g>
    where
        F: Fn(f64) -> f64,
        B: Fn(f64, f64) -> f64 + 'static,
    {
        let value = self.value().mapv(forward);
        self.graph.push_op(value, &[*self], move |ctx| {
            let mut g = ctx.grad.clone();
            Zip::from(&mut g)
                .and(ctx.input(0))
                .and(&*ctx.output)
                .for_each(|g, &x, &y| *g *= backward(x, y));
            vec![Some(g)]
        })
    }

    pub fn add(&self, other: &Var<'g>) -> Var<'g> {
        same_shape(self, other, "add");
        let value = &*self.value() + &*other.value();
        self.graph
            .push_op(value, &[*self, *other], |ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())])
    }

    pub fn sub(&self, other: &Var<'g>) -> Var<'g> {
        same_shape(self, other, "sub");
        let value = &*self.value() - &*other.value();
        self.graph
            .push_op(value, &[*self, *other], |ctx| vec![Some(ctx.grad.clone()), Some(-ctx.grad)])
    }

    pub fn mul(&self, other: &Var<'g>) -> Var<'g> {
        same_shape(self, other, "mul");
        let value = &*self.value() * &*other.value();
        self.graph.push_op(value, &[*self, *other], |ctx| {
            vec![
                ctx.needs[0].then(|| ctx.grad * ctx.input(1)),
                ctx.needs[1].then(|| ctx.grad * ctx.input(0)),
            ]
        })
    }

    pub fn div(&self, other: &Var<'g>) -> Var<'g> {
        same_shape(self, other, "div");
        let value = &*self.value() / &*other.value();
        self.graph.push_op(value, &[*self, *other], |ctx| {
            let b = ctx.input(1);
            vec![
                ctx.needs[0].then(|| ctx.grad / b),
                ctx.needs[1].then(|| -(ctx.grad * &*ctx.output) / b),
            ]
        })
    }

    pub fn scale(&self, c: f64) -> Var<'g> {
        let value = &*self.value() * c;
        self.graph
            .push_op(value, &[*self], move |ctx| vec![Some(ctx.grad * c)])
    }

    pub fn add_scalar(&self, c: f64) -> Var<'g> {
        let value = &*self.value() + c;
        self.graph
            .push_op(value, &[*self], |ctx| vec![Some(ctx.grad.clone())])
    }

    pub fn exp(&self) -> Var<'g> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var<'g> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn square(&self) -> Var<'g> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn powf(&self, p: f64) -> Var<'g> {
        self.unary(move |x| x.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    pub fn tanh(&self) -> Var<'g> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&self) -> Var<'g> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'g> {
        self.unary(
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    /// `x ln x`, continuously extended with `0` at `x = 0`.
    pub fn xlogx(&self) -> Var<'g> {
        self.unary(
            |x| if x == 0.0 { 0.0 } else { x * x.ln() },
            |x, _| x.max(f64::MIN_POSITIVE).ln() + 1.0,
        )
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Var<'g> {
        let value = ndarray::arr0(self.value().sum()).into_dyn();
        self.graph.push_op(value, &[*self], |ctx| {
            let g = *ctx.grad.iter().next().unwrap();
            vec![Some(ArrayD::from_elem(ctx.input(0).raw_dim(), g))]
        })
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&self) -> Var<'g> {
        let n = self.value().len();
        assert!(n > 0, "mean of empty tensor");
        self.sum().scale(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'g> {
        let input = self.value();
        let value = input
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.graph.push_op(value, &[*self], |ctx| {
            let g = ctx
                .grad
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(ctx.input(0).raw_dim())
                .unwrap();
            vec![Some(g)]
        })
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&self, other: &Var<'g>) -> Var<'g> {
        let value = as2(&self.value()).dot(&as2(&other.value())).into_dyn();
        self.graph.push_op(value, &[*self, *other], |ctx| {
            let g = as2(ctx.grad);
            vec![
                ctx.needs[0].then(|| g.dot(&as2(ctx.input(1)).t()).into_dyn()),
                ctx.needs[1].then(|| as2(ctx.input(0)).t().dot(&g).into_dyn()),
            ]
        })
    }

    /// Dense layer: `x [n, in]`, `weight [out, in]`, `bias [out]` -> `[n, out]`.
    pub fn linear(&self, weight: &Var<'g>, bias: &Var<'g>) -> Var<'g> {
        let x = self.value();
        let w = weight.value();
        let b = bias.value();
        let (xs, ws) = (x.shape(), w.shape());
        assert_eq!(xs.len(), 2, "linear: input must be [n, in]");
        assert_eq!(xs[1], ws[1], "linear: input width {} vs weight {:?}", xs[1], ws);
        assert_eq!(b.shape(), &[ws[0]], "linear: bias shape");
        let mut out = as2(&x).dot(&as2(&w).t());
        out += &b.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        self.graph
            .push_op(out.into_dyn(), &[*self, *weight, *bias], |ctx| {
                let g = as2(ctx.grad);
                vec![
                    ctx.needs[0].then(|| g.dot(&as2(ctx.input(1))).into_dyn()),
                    ctx.needs[1].then(|| g.t().dot(&as2(ctx.input(0))).into_dyn()),
                    ctx.needs[2].then(|| g.sum_axis(Axis(0)).into_dyn()),
                ]
            })
    }

    /// Mean over every axis except axis 1: `[n, c, ...] -> [c]`.
    pub fn channel_mean(&self) -> Var<'g> {
        let x = self.value();
        assert!(x.ndim() >= 2, "channel_mean: need a channel axis");
        let count = (x.len() / x.shape()[1]) as f64;
        let value = reduce_to_channels(&x) / count;
        self.graph.push_op(value, &[*self], move |ctx| {
            let x = ctx.input(0);
            let g = channel_view(ctx.grad, x.ndim()) / count;
            vec![Some(g.broadcast(x.raw_dim()).unwrap().to_owned())]
        })
    }

    /// `x - v` with `v` broadcast along axis 1.
    pub fn sub_channel(&self, v: &Var<'g>) -> Var<'g> {
        check_channel_operand(self, v, "sub_channel");
        let x = self.value();
        let value = &*x - &channel_view(&v.value(), x.ndim());
        self.graph.push_op(value, &[*self, *v], |ctx| {
            vec![
                Some(ctx.grad.clone()),
                ctx.needs[1].then(|| -reduce_to_channels(ctx.grad)),
            ]
        })
    }

    /// `x + v` with `v` broadcast along axis 1.
    pub fn add_channel(&self, v: &Var<'g>) -> Var<'g> {
        check_channel_operand(self, v, "add_channel");
        let x = self.value();
        let value = &*x + &channel_view(&v.value(), x.ndim());
        self.graph.push_op(value, &[*self, *v], |ctx| {
            vec![
                Some(ctx.grad.clone()),
                ctx.needs[1].then(|| reduce_to_channels(ctx.grad)),
            ]
        })
    }

    /// `x * v` with `v` broadcast along axis 1.
    pub fn mul_channel(&self, v: &Var<'g>) -> Var<'g> {
        check_channel_operand(self, v, "mul_channel");
        let x = self.value();
        let value = &*x * &channel_view(&v.value(), x.ndim());
        self.graph.push_op(value, &[*self, *v], |ctx| {
            let x = ctx.input(0);
            vec![
                ctx.needs[0].then(|| ctx.grad * &channel_view(ctx.input(1), x.ndim())),
                ctx.needs[1].then(|| reduce_to_channels(&(ctx.grad * x))),
            ]
        })
    }

    /// Row-wise log-softmax of `[n, k]`.
    pub fn log_softmax(&self) -> Var<'g> {
        let x = self.value();
        let x2 = as2(&x);
        let mut out = x2.to_owned();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.graph.push_op(out.into_dyn(), &[*self], |ctx| {
            let g = as2(ctx.grad);
            let y = as2(&ctx.output);
            let mut gx = g.to_owned();
            for ((mut gr, yr), g_row) in gx.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                let total = g_row.sum();
                Zip::from(&mut gr).and(&yr).for_each(|gv, &lv| *gv -= lv.exp() * total);
            }
            vec![Some(gx.into_dyn())]
        })
    }

    /// Row-wise softmax of `[n, k]`.
    pub fn softmax(&self) -> Var<'g> {
        let x = self.value();
        let mut out = as2(&x).to_owned();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let z = row.sum();
            row.mapv_inplace(|v| v / z);
        }
        self.graph.push_op(out.into_dyn(), &[*self], |ctx| {
            let g = as2(ctx.grad);
            let y = as2(&ctx.output);
            let mut gx = Array2::<f64>::zeros(y.raw_dim());
            for ((mut gr, yr), g_row) in gx.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                let dot: f64 = yr.iter().zip(g_row.iter()).map(|(a, b)| a * b).sum();
                Zip::from(&mut gr)
                    .and(&yr)
                    .and(&g_row)
                    .for_each(|o, &yv, &gv| *o = yv * (gv - dot));
            }
            vec![Some(gx.into_dyn())]
        })
    }

    /// Columns `cols` of `[n, k]`, in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> Var<'g> {
        let x = self.value();
        let x2 = as2(&x);
        let k = x2.ncols();
        assert!(cols.iter().all(|&c| c < k), "select_cols: index out of range");
        let value = x2.select(Axis(1), cols).into_dyn();
        let cols = cols.to_vec();
        self.graph.push_op(value, &[*self], move |ctx| {
            let g = as2(ctx.grad);
            let mut gx = Array2::<f64>::zeros((g.nrows(), k));
            for (j, &c) in cols.iter().enumerate() {
                let mut dst = gx.column_mut(c);
                dst += &g.column(j);
            }
            vec![Some(gx.into_dyn())]
        })
    }

    /// Slices `rows` along axis 0, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Var<'g> {
        let x = self.value();
        let n = x.shape()[0];
        assert!(rows.iter().all(|&r| r < n), "select_rows: index out of range");
        let value = x.select(Axis(0), rows);
        let rows = rows.to_vec();
        self.graph.push_op(value, &[*self], move |ctx| {
            let mut gx = ArrayD::<f64>::zeros(ctx.input(0).raw_dim());
            for (j, &r) in rows.iter().enumerate() {
                let mut dst = gx.index_axis_mut(Axis(0), r);
                dst += &ctx.grad.index_axis(Axis(0), j);
            }
            vec![Some(gx)]
        })
    }

    /// Concatenation along axis 0.
    pub fn concat_rows(&self, other: &Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape()[1..], b.shape()[1..], "concat_rows: trailing shape mismatch");
        let na = a.shape()[0];
        let value = ndarray::concatenate(Axis(0), &[a.view(), b.view()]).unwrap();
        self.graph.push_op(value, &[*self, *other], move |ctx| {
            vec![
                ctx.needs[0].then(|| ctx.grad.slice_axis(Axis(0), (..na).into()).to_owned()),
                ctx.needs[1].then(|| ctx.grad.slice_axis(Axis(0), (na..).into()).to_owned()),
            ]
        })
    }

    /// `out[i] = x[i, index[i]]` for `x [n, k]`.
    pub fn pick(&self, index: &[usize]) -> Var<'g> {
        let x = self.value();
        let x2 = as2(&x);
        assert_eq!(index.len(), x2.nrows(), "pick: one index per row");
        assert!(index.iter().all(|&c| c < x2.ncols()), "pick: index out of range");
        let value = Array1::from_iter(index.iter().enumerate().map(|(i, &c)| x2[[i, c]])).into_dyn();
        let index = index.to_vec();
        self.graph.push_op(value, &[*self], move |ctx| {
            let mut gx = ArrayD::<f64>::zeros(ctx.input(0).raw_dim());
            for (i, &c) in index.iter().enumerate() {
                gx[[i, c]] += ctx.grad[[i]];
            }
            vec![Some(gx)]
        })
    }

    /// Global average over the spatial axes: `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&self) -> Var<'g> {
        let x = self.value();
        let sh = x.shape().to_vec();
        assert_eq!(sh.len(), 4, "global_avg_pool: expected [n, c, h, w]");
        let area = (sh[2] * sh[3]) as f64;
        let value = x
            .view()
            .into_shape_with_order((sh[0], sh[1], sh[2] * sh[3]))
            .map(|v| v.sum_axis(Axis(2)) / area)
            .unwrap_or_else(|_| {
                let owned = x.as_standard_layout().into_owned();
                owned.into_shape_with_order((sh[0], sh[1], sh[2] * sh[3])).unwrap().sum_axis(Axis(2)) / area
            })
            .into_dyn();
        self.graph.push_op(value, &[*self], move |ctx| {
            let g = ctx.grad.view().insert_axis(Axis(2)).insert_axis(Axis(3)).to_owned() / area;
            vec![Some(g.broadcast(IxDyn(&sh)).unwrap().to_owned())]
        })
    }

    /// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn max_pool2(&self) -> Var<'g> {
        let x = self.value();
        let x = x.as_standard_layout();
        let sh = x.shape().to_vec();
        assert_eq!(sh.len(), 4, "max_pool2: expected [n, c, h, w]");
        let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        let (oh, ow) = (h / 2, w / 2);
        let src = x.as_slice().unwrap();
        let mut out = vec![0.0; n * c * oh * ow];
        let mut arg = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                            if src[i] > best {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out[o] = best;
                    arg[o] = best_i;
                }
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[n, c, oh, ow]), out).unwrap();
        self.graph.push_op(value, &[*self], move |ctx| {
            let mut gx = vec![0.0; n * c * h * w];
            let g = ctx.grad.as_standard_layout();
            for (o, &gv) in g.as_slice().unwrap().iter().enumerate() {
                gx[arg[o]] += gv;
            }
            vec![Some(ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), gx).unwrap())]
        })
    }

    /// Nearest-neighbour 2x spatial up-sampling.
    pub fn upsample2(&self) -> Var<'g> {
        let x = self.value();
        let sh = x.shape().to_vec();
        assert_eq!(sh.len(), 4, "upsample2: expected [n, c, h, w]");
        let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, c, 2 * h, 2 * w]));
        for dy in 0..2 {
            for dx in 0..2 {
                out.slice_mut(s![.., .., dy..;2, dx..;2]).assign(&x.view().into_dimensionality::<ndarray::Ix4>().unwrap());
            }
        }
        self.graph.push_op(out, &[*self], move |ctx| {
            let mut gx = ndarray::Array4::<f64>::zeros((n, c, h, w));
            let g = ctx.grad.view().into_dimensionality::<ndarray::Ix4>().unwrap();
            for dy in 0..2 {
                for dx in 0..2 {
                    gx += &g.slice(s![.., .., dy..;2, dx..;2]);
                }
            }
            vec![Some(gx.into_dyn())]
        })
    }
}

impl<'g> Add for Var<'g> {
    type Output = Var<'g>;
    fn add(self, rhs: Self) -> Self::Output {
        Var::add(&self, &rhs)
    }
}

impl<'g> Sub for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, rhs: Self) -> Self::Output {
        Var::sub(&self, &rhs)
    }
}

impl<'g> Mul for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: Self) -> Self::Output {
        Var::mul(&self, &rhs)
    }
}

impl<'g> Mul<f64> for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: f64) -> Self::Output {
        self.scale(rhs)
    }
}

impl<'g> Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Self::Output {
        self.scale(-1.0)
    }
}

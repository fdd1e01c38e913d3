//! Convolution kernels (im2col + GEMM) and a fixed depthwise 3x3 filter.

use ndarray::{Array2, ArrayD, Axis, IxDyn};

use crate::graph::Var;
use crate::Tensor;

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn cols(&self) -> usize {
        self.n * self.oh * self.ow
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Array2<f64> {
    let rows = g.c * g.kh * g.kw;
    let cols = g.cols();
    let mut out = vec![0.0; rows * cols];
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (ci * g.kh + ky) * g.kw + kx;
                let row = &mut out[r * cols..(r + 1) * cols];
                for ni in 0..g.n {
                    let plane = &x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let dst = &mut row[(ni * g.oh + oy) * g.ow..(ni * g.oh + oy + 1) * g.ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((rows, cols), out).unwrap()
}

fn col2im(cols_grad: &Array2<f64>, g: &ConvGeom) -> Vec<f64> {
    let cols = g.cols();
    let src = cols_grad.as_standard_layout();
    let src = src.as_slice().unwrap();
    let mut x = vec![0.0; g.n * g.c * g.h * g.w];
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (ci * g.kh + ky) * g.kw + kx;
                let row = &src[r * cols..(r + 1) * cols];
                for ni in 0..g.n {
                    let base = (ni * g.c + ci) * g.h * g.w;
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let s = &row[(ni * g.oh + oy) * g.ow..(ni * g.oh + oy + 1) * g.ow];
                        for (ox, &v) in s.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                x[base + iy as usize * g.w + ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[o, n*oh*ow]` matrix to `[n, o, oh, ow]`.
fn cols_to_nchw(m: &Array2<f64>, n: usize, o: usize, oh: usize, ow: usize) -> ArrayD<f64> {
    let m = m.as_standard_layout();
    let src = m.as_slice().unwrap();
    let area = oh * ow;
    let mut out = vec![0.0; n * o * area];
    for oc in 0..o {
        for ni in 0..n {
            let s = &src[oc * n * area + ni * area..oc * n * area + (ni + 1) * area];
            out[(ni * o + oc) * area..(ni * o + oc + 1) * area].copy_from_slice(s);
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[n, o, oh, ow]), out).unwrap()
}

fn nchw_to_cols(t: &Tensor) -> Array2<f64> {
    let t = t.as_standard_layout();
    let sh = t.shape();
    let (n, o, area) = (sh[0], sh[1], sh[2] * sh[3]);
    let src = t.as_slice().unwrap();
    let mut out = vec![0.0; n * o * area];
    for ni in 0..n {
        for oc in 0..o {
            let s = &src[(ni * o + oc) * area..(ni * o + oc + 1) * area];
            out[oc * n * area + ni * area..oc * n * area + (ni + 1) * area].copy_from_slice(s);
        }
    }
    Array2::from_shape_vec((o, n * area), out).unwrap()
}

impl<'g> Var<'g> {
    /// 2-D convolution: `x [n, c, h, w]`, `weight [o, c, kh, kw]`, `bias [o]`.
    pub fn conv2d(&self, weight: &Var<'g>, bias: &Var<'g>, stride: usize, pad: usize) -> Var<'g> {
        let x = self.value();
        let w = weight.value();
        let (xs, ws) = (x.shape().to_vec(), w.shape().to_vec());
        assert_eq!(xs.len(), 4, "conv2d: input must be [n, c, h, w]");
        assert_eq!(ws.len(), 4, "conv2d: weight must be [o, c, kh, kw]");
        assert_eq!(xs[1], ws[1], "conv2d: input channels {} vs weight {:?}", xs[1], ws);
        assert_eq!(bias.shape(), vec![ws[0]], "conv2d: bias shape");
        assert!(stride >= 1);
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
            oh: (xs[2] + 2 * pad - ws[2]) / stride + 1,
            ow: (xs[3] + 2 * pad - ws[3]) / stride + 1,
        };
        let o = ws[0];
        let xsl = x.as_standard_layout();
        let cols = im2col(xsl.as_slice().unwrap(), &geom);
        let wm = w
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((o, geom.c * geom.kh * geom.kw))
            .unwrap();
        let mut out = wm.dot(&cols);
        let b = bias.value();
        for (mut row, &bv) in out.axis_iter_mut(Axis(0)).zip(b.iter()) {
            row += bv;
        }
        let value = cols_to_nchw(&out, geom.n, o, geom.oh, geom.ow);

        self.graph
            .push_op(value, &[*self, *weight, *bias], move |ctx| {
                let gm = nchw_to_cols(ctx.grad);
                let w = ctx.input(1);
                let wm = w
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((o, geom.c * geom.kh * geom.kw))
                    .unwrap();
                let gx = ctx.needs[0].then(|| {
                    let gcols = wm.t().dot(&gm);
                    ArrayD::from_shape_vec(IxDyn(&[geom.n, geom.c, geom.h, geom.w]), col2im(&gcols, &geom))
                        .unwrap()
                });
                let gw = ctx.needs[1].then(|| {
                    let x = ctx.input(0).as_standard_layout();
                    let cols = im2col(x.as_slice().unwrap(), &geom);
                    gm.dot(&cols.t())
                        .into_shape_with_order(IxDyn(w.shape()))
                        .unwrap()
                });
                let gb = ctx.needs[2].then(|| gm.sum_axis(Axis(1)).into_dyn());
                vec![gx, gw, gb]
            })
    }

    /// Per-channel 3x3 filtering with a fixed kernel and reflect padding.
    ///
    /// Reflect padding mirrors without repeating the edge (`-1 -> 1`); a
    /// single-pixel axis reflects onto itself.
    pub fn filter3x3_reflect(&self, kernel: [[f64; 3]; 3]) -> Var<'g> {
        let x = self.value();
        let sh = x.shape().to_vec();
        assert_eq!(sh.len(), 4, "filter3x3_reflect: expected [n, c, h, w]");
        let (planes, h, w) = (sh[0] * sh[1], sh[2], sh[3]);
        let taps = reflect_taps(h, w);
        let xs = x.as_standard_layout();
        let src = xs.as_slice().unwrap();
        let mut out = vec![0.0; src.len()];
        for p in 0..planes {
            let base = p * h * w;
            for (o, tap) in taps.iter().enumerate() {
                let mut acc = 0.0;
                for (k, &i) in tap.iter().enumerate() {
                    acc += kernel[k / 3][k % 3] * src[base + i];
                }
                out[base + o] = acc;
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&sh), out).unwrap();
        self.graph.push_op(value, &[*self], move |ctx| {
            let g = ctx.grad.as_standard_layout();
            let gs = g.as_slice().unwrap();
            let mut gx = vec![0.0; gs.len()];
            for p in 0..planes {
                let base = p * h * w;
                for (o, tap) in taps.iter().enumerate() {
                    let gv = gs[base + o];
                    for (k, &i) in tap.iter().enumerate() {
                        gx[base + i] += kernel[k / 3][k % 3] * gv;
                    }
                }
            }
            vec![Some(ArrayD::from_shape_vec(IxDyn(&sh), gx).unwrap())]
        })
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// For each output pixel, the nine source offsets of its 3x3 neighbourhood.
fn reflect_taps(h: usize, w: usize) -> Vec<[usize; 9]> {
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut t = [0usize; 9];
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let k = ((dy + 1) * 3 + dx + 1) as usize;
                    t[k] = reflect(y + dy, h) * w + reflect(x + dx, w);
                }
            }
            taps.push(t);
        }
    }
    taps
}

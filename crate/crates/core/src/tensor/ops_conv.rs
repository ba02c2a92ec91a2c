//! 2-D convolution and resampling ops on (C, H, W) tensors.
//!
//! Convolution weights use a flat (C_out, C_in*kh*kw) layout so that weight
//! modulation can operate on plain 2-D tensors. Kernels must be odd-sized;
//! padding is implicit zero same-padding and stride is 1. Down/upsampling is
//! done by separate factor-2 resampling ops.
//!
//! The three convolution ops form a closed family under differentiation:
//! the gradient of each one is expressed with the other two, so gradient
//! penalties that differentiate through gradients work to any order.

use std::rc::Rc;

use crate::scalar::Scalar;
use crate::tensor::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Target index range [lo, hi) such that target+d stays inside [0, n).
fn range_for(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi_i = (n as isize - d).clamp(0, n as isize);
    (lo.min(n), hi_i as usize)
}

pub(crate) fn conv2d_kernel<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    kh: usize,
    kw: usize,
) -> Tensor<S> {
    assert_eq!(x.rank(), 3);
    assert_eq!(w.rank(), 2);
    assert!(kh % 2 == 1 && kw % 2 == 1, "kernel dims must be odd");
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let co = w.shape()[0];
    assert_eq!(w.shape()[1], ci * kh * kw, "weight columns vs in-channels");
    let (pa, pb) = ((kh / 2) as isize, (kw / 2) as isize);
    let xd = x.data();
    let wv = w.data();
    let mut out = vec![S::zero(); co * h * wd];
    for oc in 0..co {
        let wbase = oc * ci * kh * kw;
        let obase = oc * h * wd;
        for c in 0..ci {
            let xbase = c * h * wd;
            for a in 0..kh {
                let dy = a as isize - pa;
                let (ylo, yhi) = range_for(h, dy);
                for b in 0..kw {
                    let dx = b as isize - pb;
                    let weight = wv[wbase + (c * kh + a) * kw + b];
                    if weight == S::zero() {
                        continue;
                    }
                    let (xlo, xhi) = range_for(wd, dx);
                    for y in ylo..yhi {
                        let orow = obase + y * wd;
                        let xrow = xbase + ((y as isize + dy) as usize) * wd;
                        let src = xrow as isize + dx;
                        for i in xlo..xhi {
                            out[orow + i] += weight * xd[(src + i as isize) as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![co, h, wd], out)
}

pub(crate) fn conv_input_grad_kernel<S: Scalar>(
    g: &Tensor<S>,
    w: &Tensor<S>,
    ci: usize,
    kh: usize,
    kw: usize,
) -> Tensor<S> {
    let (co, h, wd) = (g.shape()[0], g.shape()[1], g.shape()[2]);
    assert_eq!(w.shape(), &[co, ci * kh * kw]);
    let (pa, pb) = ((kh / 2) as isize, (kw / 2) as isize);
    let gd = g.data();
    let wv = w.data();
    let mut out = vec![S::zero(); ci * h * wd];
    for oc in 0..co {
        let wbase = oc * ci * kh * kw;
        let gbase = oc * h * wd;
        for c in 0..ci {
            let obase = c * h * wd;
            for a in 0..kh {
                let dy = a as isize - pa;
                // gx[c, y, x] += w * g[oc, y - dy, x - dx]
                let (ylo, yhi) = range_for(h, -dy);
                for b in 0..kw {
                    let dx = b as isize - pb;
                    let weight = wv[wbase + (c * kh + a) * kw + b];
                    if weight == S::zero() {
                        continue;
                    }
                    let (xlo, xhi) = range_for(wd, -dx);
                    for y in ylo..yhi {
                        let orow = obase + y * wd;
                        let grow = gbase + ((y as isize - dy) as usize) * wd;
                        let src = grow as isize - dx;
                        for i in xlo..xhi {
                            out[orow + i] += weight * gd[(src + i as isize) as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![ci, h, wd], out)
}

pub(crate) fn conv_weight_grad_kernel<S: Scalar>(
    x: &Tensor<S>,
    g: &Tensor<S>,
    kh: usize,
    kw: usize,
) -> Tensor<S> {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let co = g.shape()[0];
    assert_eq!(&g.shape()[1..], &[h, wd]);
    let (pa, pb) = ((kh / 2) as isize, (kw / 2) as isize);
    let xd = x.data();
    let gd = g.data();
    let mut out = vec![S::zero(); co * ci * kh * kw];
    for oc in 0..co {
        let gbase = oc * h * wd;
        let wbase = oc * ci * kh * kw;
        for c in 0..ci {
            let xbase = c * h * wd;
            for a in 0..kh {
                let dy = a as isize - pa;
                let (ylo, yhi) = range_for(h, dy);
                for b in 0..kw {
                    let dx = b as isize - pb;
                    let (xlo, xhi) = range_for(wd, dx);
                    let mut acc = S::zero();
                    for y in ylo..yhi {
                        let grow = gbase + y * wd;
                        let xrow = xbase + ((y as isize + dy) as usize) * wd;
                        let src = xrow as isize + dx;
                        for i in xlo..xhi {
                            acc += gd[grow + i] * xd[(src + i as isize) as usize];
                        }
                    }
                    out[wbase + (c * kh + a) * kw + b] = acc;
                }
            }
        }
    }
    Tensor::new(vec![co, ci * kh * kw], out)
}

struct Conv2dOp {
    kh: usize,
    kw: usize,
}
impl<S: Scalar> Op<S> for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn vjp(&self, t: &mut Tape<S>, i: &[Var], _o: Var, g: Var, n: &[bool]) -> Vec<Option<Var>> {
        let ci = t.shape_of(i[0])[0];
        let gx = if n[0] {
            Some(t.conv_input_grad(g, i[1], ci, self.kh, self.kw))
        } else {
            None
        };
        let gw = if n[1] {
            Some(t.conv_weight_grad(i[0], g, self.kh, self.kw))
        } else {
            None
        };
        vec![gx, gw]
    }
}

struct ConvInputGradOp {
    ci: usize,
    kh: usize,
    kw: usize,
}
impl<S: Scalar> Op<S> for ConvInputGradOp {
    fn name(&self) -> &'static str {
        "conv_input_grad"
    }
    fn vjp(&self, t: &mut Tape<S>, i: &[Var], _o: Var, u: Var, n: &[bool]) -> Vec<Option<Var>> {
        let gg = if n[0] { Some(t.conv2d(u, i[1], self.kh, self.kw)) } else { None };
        let gw = if n[1] { Some(t.conv_weight_grad(u, i[0], self.kh, self.kw)) } else { None };
        let _ = self.ci;
        vec![gg, gw]
    }
}

struct ConvWeightGradOp {
    kh: usize,
    kw: usize,
}
impl<S: Scalar> Op<S> for ConvWeightGradOp {
    fn name(&self) -> &'static str {
        "conv_weight_grad"
    }
    fn vjp(&self, t: &mut Tape<S>, i: &[Var], _o: Var, u: Var, n: &[bool]) -> Vec<Option<Var>> {
        let ci = t.shape_of(i[0])[0];
        let gx = if n[0] {
            Some(t.conv_input_grad(i[1], u, ci, self.kh, self.kw))
        } else {
            None
        };
        let gg = if n[1] { Some(t.conv2d(i[0], u, self.kh, self.kw)) } else { None };
        vec![gx, gg]
    }
}

struct AvgPool2Op;
impl<S: Scalar> Op<S> for AvgPool2Op {
    fn name(&self) -> &'static str {
        "avg_pool2"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        let up = t.upsample_nearest2(g);
        vec![Some(t.mul_scalar(up, 0.25))]
    }
}

struct UpsampleNearest2Op;
impl<S: Scalar> Op<S> for UpsampleNearest2Op {
    fn name(&self) -> &'static str {
        "upsample_nearest2"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        let pooled = t.avg_pool2(g);
        vec![Some(t.mul_scalar(pooled, 4.0))]
    }
}

struct Roll2dOp {
    dy: isize,
    dx: isize,
}
impl<S: Scalar> Op<S> for Roll2dOp {
    fn name(&self) -> &'static str {
        "roll2d"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.roll2d(g, -self.dy, -self.dx))]
    }
}

impl<S: Scalar> Tape<S> {
    /// Same-padded stride-1 convolution of (C_in, H, W) with weights
    /// (C_out, C_in*kh*kw).
    pub fn conv2d(&mut self, x: Var, w: Var, kh: usize, kw: usize) -> Var {
        let out = conv2d_kernel(self.val(x), self.val(w), kh, kw);
        self.push(out, vec![x, w], Rc::new(Conv2dOp { kh, kw }))
    }

    /// Adjoint of `conv2d` in its input: maps output cotangents (C_out, H, W)
    /// back to input space (C_in, H, W).
    pub fn conv_input_grad(&mut self, g: Var, w: Var, ci: usize, kh: usize, kw: usize) -> Var {
        let out = conv_input_grad_kernel(self.val(g), self.val(w), ci, kh, kw);
        self.push(out, vec![g, w], Rc::new(ConvInputGradOp { ci, kh, kw }))
    }

    /// Adjoint of `conv2d` in its weights.
    pub fn conv_weight_grad(&mut self, x: Var, g: Var, kh: usize, kw: usize) -> Var {
        let out = conv_weight_grad_kernel(self.val(x), self.val(g), kh, kw);
        self.push(out, vec![x, g], Rc::new(ConvWeightGradOp { kh, kw }))
    }

    /// 2x2 average pooling; spatial dims must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let t = self.val_rc(x);
        assert_eq!(t.rank(), 3);
        let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims, got {}x{}", h, w);
        let (oh, ow) = (h / 2, w / 2);
        let xd = t.data();
        let quarter = S::from_float(0.25);
        let mut out = vec![S::zero(); c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                let r0 = (ch * h + 2 * y) * w;
                let r1 = r0 + w;
                let orow = (ch * oh + y) * ow;
                for xcol in 0..ow {
                    let i = 2 * xcol;
                    out[orow + xcol] = (xd[r0 + i] + xd[r0 + i + 1] + xd[r1 + i] + xd[r1 + i + 1]) * quarter;
                }
            }
        }
        self.push(Tensor::new(vec![c, oh, ow], out), vec![x], Rc::new(AvgPool2Op))
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let t = self.val_rc(x);
        assert_eq!(t.rank(), 3);
        let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let (oh, ow) = (2 * h, 2 * w);
        let xd = t.data();
        let mut out = vec![S::zero(); c * oh * ow];
        for ch in 0..c {
            for y in 0..h {
                let xrow = (ch * h + y) * w;
                let o0 = (ch * oh + 2 * y) * ow;
                let o1 = o0 + ow;
                for xcol in 0..w {
                    let v = xd[xrow + xcol];
                    let i = 2 * xcol;
                    out[o0 + i] = v;
                    out[o0 + i + 1] = v;
                    out[o1 + i] = v;
                    out[o1 + i + 1] = v;
                }
            }
        }
        self.push(Tensor::new(vec![c, oh, ow], out), vec![x], Rc::new(UpsampleNearest2Op))
    }

    /// Cyclic shift of the last two axes by (dy, dx).
    pub fn roll2d(&mut self, x: Var, dy: isize, dx: isize) -> Var {
        let t = self.val_rc(x);
        assert_eq!(t.rank(), 3);
        let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let xd = t.data();
        let mut out = vec![S::zero(); c * h * w];
        for ch in 0..c {
            for y in 0..h {
                let sy = (y as isize - dy).rem_euclid(h as isize) as usize;
                let srow = (ch * h + sy) * w;
                let orow = (ch * h + y) * w;
                for xcol in 0..w {
                    let sx = (xcol as isize - dx).rem_euclid(w as isize) as usize;
                    out[orow + xcol] = xd[srow + sx];
                }
            }
        }
        self.push(Tensor::new(vec![c, h, w], out), vec![x], Rc::new(Roll2dOp { dy, dx }))
    }
}

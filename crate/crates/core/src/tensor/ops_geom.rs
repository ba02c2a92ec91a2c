//! Sampling, scattering, prefix sums, and softmax splatting.
//!
//! These are the geometry-flavored primitives: bilinear reads/writes on
//! feature planes (with gradients into the plane, not the coordinates),
//! exclusive prefix sums for transmittance accumulation, and the scatter
//! that implements depth-weighted forward warping.

use std::rc::Rc;

use crate::scalar::Scalar;
use crate::tensor::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Bilinear footprint of a point in clamped plane coordinates.
/// `uv` is normalized to [0, 1]; texels sit at (i + 0.5) / r.
fn plane_corners<S: Scalar>(u: S, v: S, r: usize) -> [(usize, usize, S); 4] {
    let rf = S::from_usize(r).unwrap();
    let half = S::from_float(0.5);
    let maxc = S::from_usize(r - 1).unwrap();
    let px = (u * rf - half).max(S::zero()).min(maxc);
    let py = (v * rf - half).max(S::zero()).min(maxc);
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    let x0u = x0.to_usize().unwrap_or(0).min(r - 1);
    let y0u = y0.to_usize().unwrap_or(0).min(r - 1);
    let x1u = (x0u + 1).min(r - 1);
    let y1u = (y0u + 1).min(r - 1);
    let one = S::one();
    [
        (x0u, y0u, (one - fx) * (one - fy)),
        (x1u, y0u, fx * (one - fy)),
        (x0u, y1u, (one - fx) * fy),
        (x1u, y1u, fx * fy),
    ]
}

struct PlaneSampleOp<S: Scalar> {
    uv: Rc<Tensor<S>>,
    r: usize,
}
impl<S: Scalar> Op<S> for PlaneSampleOp<S> {
    fn name(&self) -> &'static str {
        "plane_sample"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.plane_scatter(g, Rc::clone(&self.uv), self.r))]
    }
}

struct PlaneScatterOp<S: Scalar> {
    uv: Rc<Tensor<S>>,
}
impl<S: Scalar> Op<S> for PlaneScatterOp<S> {
    fn name(&self) -> &'static str {
        "plane_scatter"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.plane_sample(g, Rc::clone(&self.uv)))]
    }
}

struct CumsumExclOp;
impl<S: Scalar> Op<S> for CumsumExclOp {
    fn name(&self) -> &'static str {
        "cumsum_excl"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.cumsum_excl_rev(g))]
    }
}

struct CumsumExclRevOp;
impl<S: Scalar> Op<S> for CumsumExclRevOp {
    fn name(&self) -> &'static str {
        "cumsum_excl_rev"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.cumsum_excl(g))]
    }
}

/// Corner data shared by the splat forward and its gradients.
/// Returns None for sources with non-finite positions.
fn splat_corners<S: Scalar>(
    px: S,
    py: S,
    h: usize,
    w: usize,
) -> Option<[(isize, isize, S, S, S); 4]> {
    if !px.is_finite() || !py.is_finite() {
        return None;
    }
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    let x0i = x0.to_isize()?;
    let y0i = y0.to_isize()?;
    let one = S::one();
    let _ = (h, w);
    // (x, y, weight, dw/dpx, dw/dpy)
    Some([
        (x0i, y0i, (one - fx) * (one - fy), -(one - fy), -(one - fx)),
        (x0i + 1, y0i, fx * (one - fy), one - fy, -fx),
        (x0i, y0i + 1, (one - fx) * fy, -fy, one - fx),
        (x0i + 1, y0i + 1, fx * fy, fy, fx),
    ])
}

fn in_bounds(x: isize, y: isize, h: usize, w: usize) -> Option<usize> {
    if x >= 0 && (x as usize) < w && y >= 0 && (y as usize) < h {
        Some(y as usize * w + x as usize)
    } else {
        None
    }
}

struct SoftmaxSplatOp<S: Scalar> {
    h: usize,
    w: usize,
    shifts: Rc<Tensor<S>>,
}
impl<S: Scalar> Op<S> for SoftmaxSplatOp<S> {
    fn name(&self) -> &'static str {
        "softmax_splat"
    }
    fn vjp(&self, t: &mut Tape<S>, i: &[Var], _o: Var, g: Var, n: &[bool]) -> Vec<Option<Var>> {
        let pos = t.val_rc(i[0]);
        let zneg = t.val_rc(i[1]);
        let payload = t.val_rc(i[2]);
        let gpos = if n[0] {
            Some(t.splat_pos_vjp(g, Rc::clone(&pos), Rc::clone(&zneg), Rc::clone(&payload), Rc::clone(&self.shifts)))
        } else {
            None
        };
        let gz = if n[1] {
            Some(t.splat_zneg_vjp(g, Rc::clone(&pos), Rc::clone(&zneg), Rc::clone(&payload), Rc::clone(&self.shifts)))
        } else {
            None
        };
        let gp = if n[2] {
            Some(t.splat_payload_vjp(g, Rc::clone(&pos), Rc::clone(&zneg), Rc::clone(&self.shifts)))
        } else {
            None
        };
        let _ = (self.h, self.w);
        vec![gpos, gz, gp]
    }
}

macro_rules! splat_vjp_op {
    ($name:ident, $label:literal, $method:ident) => {
        struct $name<S: Scalar> {
            pos: Rc<Tensor<S>>,
            zneg: Rc<Tensor<S>>,
            payload: Option<Rc<Tensor<S>>>,
            shifts: Rc<Tensor<S>>,
        }
        impl<S: Scalar> Op<S> for $name<S> {
            fn name(&self) -> &'static str {
                $label
            }
            fn vjp(
                &self,
                _t: &mut Tape<S>,
                _i: &[Var],
                _o: Var,
                _g: Var,
                _n: &[bool],
            ) -> Vec<Option<Var>> {
                let _ = (&self.pos, &self.zneg, &self.payload, &self.shifts);
                unimplemented!("second-order gradients through splatting are unsupported")
            }
        }
    };
}

splat_vjp_op!(SplatPayloadVjpOp, "splat_payload_vjp", splat_payload_vjp);
splat_vjp_op!(SplatZnegVjpOp, "splat_zneg_vjp", splat_zneg_vjp);
splat_vjp_op!(SplatPosVjpOp, "splat_pos_vjp", splat_pos_vjp);

impl<S: Scalar> Tape<S> {
    /// Bilinear read of a (C, R, R) plane at N normalized points (2, N) in
    /// [0, 1] with clamp-to-edge. Coordinates are constant; gradients flow
    /// into the plane.
    pub fn plane_sample(&mut self, plane: Var, uv: Rc<Tensor<S>>) -> Var {
        let p = self.val_rc(plane);
        assert_eq!(p.rank(), 3);
        assert_eq!(p.shape()[1], p.shape()[2], "square planes only");
        let (c, r) = (p.shape()[0], p.shape()[1]);
        assert_eq!(uv.shape()[0], 2);
        let n = uv.shape()[1];
        let uvd = uv.data();
        let pd = p.data();
        let mut corners = Vec::with_capacity(n);
        for k in 0..n {
            corners.push(plane_corners(uvd[k], uvd[n + k], r));
        }
        let mut out = vec![S::zero(); c * n];
        for ch in 0..c {
            let pbase = ch * r * r;
            let obase = ch * n;
            for (k, cs) in corners.iter().enumerate() {
                let mut acc = S::zero();
                for &(x, y, wgt) in cs {
                    acc += wgt * pd[pbase + y * r + x];
                }
                out[obase + k] = acc;
            }
        }
        self.push(Tensor::new(vec![c, n], out), vec![plane], Rc::new(PlaneSampleOp { uv, r }))
    }

    /// Adjoint of `plane_sample`: bilinear scatter of (C, N) values into a
    /// zeroed (C, R, R) plane at the same points.
    pub fn plane_scatter(&mut self, values: Var, uv: Rc<Tensor<S>>, r: usize) -> Var {
        let v = self.val_rc(values);
        assert_eq!(v.rank(), 2);
        let (c, n) = (v.shape()[0], v.shape()[1]);
        assert_eq!(uv.shape(), &[2, n]);
        let uvd = uv.data();
        let vd = v.data();
        let mut corners = Vec::with_capacity(n);
        for k in 0..n {
            corners.push(plane_corners(uvd[k], uvd[n + k], r));
        }
        let mut out = vec![S::zero(); c * r * r];
        for ch in 0..c {
            let pbase = ch * r * r;
            let vbase = ch * n;
            for (k, cs) in corners.iter().enumerate() {
                let val = vd[vbase + k];
                for &(x, y, wgt) in cs {
                    out[pbase + y * r + x] += wgt * val;
                }
            }
        }
        self.push(Tensor::new(vec![c, r, r], out), vec![values], Rc::new(PlaneScatterOp { uv }))
    }

    /// Exclusive prefix sum along the last axis: out[.., i] = sum_{j<i} x[.., j].
    pub fn cumsum_excl(&mut self, x: Var) -> Var {
        let t = self.val_rc(x);
        assert!(t.rank() >= 1);
        let k = *t.shape().last().unwrap();
        let rows = t.len() / k.max(1);
        let xd = t.data();
        let mut out = vec![S::zero(); t.len()];
        for r in 0..rows {
            let base = r * k;
            let mut acc = S::zero();
            for i in 0..k {
                out[base + i] = acc;
                acc += xd[base + i];
            }
        }
        self.push(Tensor::new(t.shape().to_vec(), out), vec![x], Rc::new(CumsumExclOp))
    }

    /// Exclusive suffix sum along the last axis: out[.., i] = sum_{j>i} x[.., j].
    pub fn cumsum_excl_rev(&mut self, x: Var) -> Var {
        let t = self.val_rc(x);
        assert!(t.rank() >= 1);
        let k = *t.shape().last().unwrap();
        let rows = t.len() / k.max(1);
        let xd = t.data();
        let mut out = vec![S::zero(); t.len()];
        for r in 0..rows {
            let base = r * k;
            let mut acc = S::zero();
            for i in (0..k).rev() {
                out[base + i] = acc;
                acc += xd[base + i];
            }
        }
        self.push(Tensor::new(t.shape().to_vec(), out), vec![x], Rc::new(CumsumExclRevOp))
    }

    /// Depth-weighted bilinear scatter of N sources into an (h, w) target.
    ///
    /// `pos` is (2, N) continuous target pixel coordinates (x then y row),
    /// `zneg` is (N) the importance exponent (larger means stronger),
    /// `payload` is (K, N). `shifts` is a constant (h, w) exponent offset per
    /// target pixel, typically minus the maximum `zneg` landing there, so
    /// the exponentials stay in (0, 1].
    ///
    /// Output is (K+1, h, w); channel K holds the sum of scatter weights.
    /// Sources with non-finite positions and corners outside the target are
    /// dropped. First-order gradients flow into all three inputs; second
    /// order is not supported.
    pub fn softmax_splat(
        &mut self,
        pos: Var,
        zneg: Var,
        payload: Var,
        h: usize,
        w: usize,
        shifts: Rc<Tensor<S>>,
    ) -> Var {
        let p = self.val_rc(pos);
        let z = self.val_rc(zneg);
        let pay = self.val_rc(payload);
        let n = z.len();
        assert_eq!(p.shape(), &[2, n]);
        assert_eq!(z.shape(), &[n]);
        assert_eq!(pay.rank(), 2);
        assert_eq!(pay.shape()[1], n);
        assert_eq!(shifts.shape(), &[h, w]);
        let k = pay.shape()[0];
        let (pd, zd, payd, sd) = (p.data(), z.data(), pay.data(), shifts.data());
        let mut out = vec![S::zero(); (k + 1) * h * w];
        for i in 0..n {
            let Some(corners) = splat_corners(pd[i], pd[n + i], h, w) else { continue };
            for &(x, y, b, _, _) in &corners {
                let Some(pix) = in_bounds(x, y, h, w) else { continue };
                let m = (zd[i] + sd[pix]).exp();
                let bm = b * m;
                for ch in 0..k {
                    out[ch * h * w + pix] += bm * payd[ch * n + i];
                }
                out[k * h * w + pix] += bm;
            }
        }
        self.push(
            Tensor::new(vec![k + 1, h, w], out),
            vec![pos, zneg, payload],
            Rc::new(SoftmaxSplatOp { h, w, shifts }),
        )
    }

    fn splat_payload_vjp(
        &mut self,
        g: Var,
        pos: Rc<Tensor<S>>,
        zneg: Rc<Tensor<S>>,
        shifts: Rc<Tensor<S>>,
    ) -> Var {
        let gt = self.val_rc(g);
        let (h, w) = (shifts.shape()[0], shifts.shape()[1]);
        let k = gt.shape()[0] - 1;
        let n = zneg.len();
        let (pd, zd, gd, sd) = (pos.data(), zneg.data(), gt.data(), shifts.data());
        let mut out = vec![S::zero(); k * n];
        for i in 0..n {
            let Some(corners) = splat_corners(pd[i], pd[n + i], h, w) else { continue };
            for &(x, y, b, _, _) in &corners {
                let Some(pix) = in_bounds(x, y, h, w) else { continue };
                let bm = b * (zd[i] + sd[pix]).exp();
                for ch in 0..k {
                    out[ch * n + i] += bm * gd[ch * h * w + pix];
                }
            }
        }
        self.push(
            Tensor::new(vec![k, n], out),
            vec![g],
            Rc::new(SplatPayloadVjpOp { pos, zneg, payload: None, shifts }),
        )
    }

    fn splat_zneg_vjp(
        &mut self,
        g: Var,
        pos: Rc<Tensor<S>>,
        zneg: Rc<Tensor<S>>,
        payload: Rc<Tensor<S>>,
        shifts: Rc<Tensor<S>>,
    ) -> Var {
        let gt = self.val_rc(g);
        let (h, w) = (shifts.shape()[0], shifts.shape()[1]);
        let k = gt.shape()[0] - 1;
        let n = zneg.len();
        let (pd, zd, payd, gd, sd) = (pos.data(), zneg.data(), payload.data(), gt.data(), shifts.data());
        let mut out = vec![S::zero(); n];
        for i in 0..n {
            let Some(corners) = splat_corners(pd[i], pd[n + i], h, w) else { continue };
            for &(x, y, b, _, _) in &corners {
                let Some(pix) = in_bounds(x, y, h, w) else { continue };
                let m = (zd[i] + sd[pix]).exp();
                let mut up = gd[k * h * w + pix];
                for ch in 0..k {
                    up += gd[ch * h * w + pix] * payd[ch * n + i];
                }
                out[i] += b * m * up;
            }
        }
        self.push(
            Tensor::new(vec![n], out),
            vec![g],
            Rc::new(SplatZnegVjpOp { pos, zneg, payload: Some(payload), shifts }),
        )
    }

    fn splat_pos_vjp(
        &mut self,
        g: Var,
        pos: Rc<Tensor<S>>,
        zneg: Rc<Tensor<S>>,
        payload: Rc<Tensor<S>>,
        shifts: Rc<Tensor<S>>,
    ) -> Var {
        let gt = self.val_rc(g);
        let (h, w) = (shifts.shape()[0], shifts.shape()[1]);
        let k = gt.shape()[0] - 1;
        let n = zneg.len();
        let (pd, zd, payd, gd, sd) = (pos.data(), zneg.data(), payload.data(), gt.data(), shifts.data());
        let mut out = vec![S::zero(); 2 * n];
        for i in 0..n {
            let Some(corners) = splat_corners(pd[i], pd[n + i], h, w) else { continue };
            for &(x, y, _, dbx, dby) in &corners {
                let Some(pix) = in_bounds(x, y, h, w) else { continue };
                let m = (zd[i] + sd[pix]).exp();
                let mut up = gd[k * h * w + pix];
                for ch in 0..k {
                    up += gd[ch * h * w + pix] * payd[ch * n + i];
                }
                out[i] += dbx * m * up;
                out[n + i] += dby * m * up;
            }
        }
        self.push(
            Tensor::new(vec![2, n], out),
            vec![g],
            Rc::new(SplatPosVjpOp { pos, zneg, payload: Some(payload), shifts }),
        )
    }
}

/// Per-target-pixel exponent shift for `softmax_splat`: minus the maximum
/// `zneg` among sources whose footprint puts nonzero weight on the pixel,
/// 0 where nothing lands. Computed from values, used as a constant.
pub fn splat_shift_map<S: Scalar>(pos: &Tensor<S>, zneg: &Tensor<S>, h: usize, w: usize) -> Tensor<S> {
    let n = zneg.len();
    assert_eq!(pos.shape(), &[2, n]);
    let (pd, zd) = (pos.data(), zneg.data());
    let mut mx = vec![S::neg_infinity(); h * w];
    for i in 0..n {
        let Some(corners) = splat_corners(pd[i], pd[n + i], h, w) else { continue };
        for &(x, y, b, _, _) in &corners {
            if b == S::zero() {
                continue;
            }
            let Some(pix) = in_bounds(x, y, h, w) else { continue };
            if zd[i] > mx[pix] {
                mx[pix] = zd[i];
            }
        }
    }
    Tensor::new(
        vec![h, w],
        mx.into_iter().map(|v| if v.is_finite() { -v } else { S::zero() }).collect(),
    )
}

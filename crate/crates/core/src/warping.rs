//! Depth-guided forward warping between camera views.
//!
//! Every source pixel is unprojected with its depth, moved into the target
//! camera frame, reprojected, and scattered onto the target grid with a
//! bilinear footprint weighted by exp(-beta * z_target), so among pixels
//! that collide the nearer one dominates. The target-frame depth rides
//! along as an extra payload channel, which gives a warped depth map for
//! warping back. Target pixels whose accumulated weight stays below a
//! threshold are disocclusions: they get mask 1 and value 0.

use std::rc::Rc;

use crate::geometry::{pixel_grid, Intrinsics, Pose, RelativePose};
use crate::scalar::Scalar;
use crate::tensor::{splat_shift_map, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct WarpConfig {
    /// Importance sharpness: splat weight is exp(-beta * z_target).
    pub beta: f64,
    /// Accumulated-weight threshold below which a target pixel is a hole.
    /// The per-pixel exponent shift makes the strongest single contribution
    /// weigh at most 1, so this is a fraction of that maximum footprint.
    pub tau_w: f64,
    /// Sources whose target depth falls below this are behind or grazing
    /// the target camera and are dropped.
    pub z_eps: f64,
}

impl WarpConfig {
    /// Default sharpness ties beta to the scene scale: 10 / far.
    pub fn for_far(far: f64) -> Self {
        WarpConfig { beta: 10.0 / far, tau_w: 0.05, z_eps: 1e-4 }
    }
}

/// Binary hole mask: 1 marks pixels that received (almost) no splat mass.
#[derive(Clone, Debug)]
pub struct OcclusionMask<S> {
    data: Tensor<S>,
}

impl<S: Scalar> OcclusionMask<S> {
    pub fn new(data: Tensor<S>) -> Self {
        assert_eq!(data.rank(), 2);
        assert!(
            data.data().iter().all(|&v| v == S::zero() || v == S::one()),
            "occlusion masks are binary"
        );
        OcclusionMask { data }
    }

    pub fn data(&self) -> &Tensor<S> {
        &self.data
    }

    pub fn hole_fraction(&self) -> f64 {
        let n = self.data.len().max(1);
        let holes: f64 = self.data.data().iter().map(|v| v.as_f64()).sum();
        holes / n as f64
    }
}

/// Everything the forward warp produces, as plain values.
#[derive(Clone, Debug)]
pub struct WarpResult<S> {
    /// (3, H, W) warped image, 0 in holes.
    pub image: Tensor<S>,
    /// (H, W) target-frame z-depth carried through the splat, 0 in holes.
    pub depth: Tensor<S>,
    /// (H, W) accumulated splat weights.
    pub weights: Tensor<S>,
    pub mask: OcclusionMask<S>,
}

/// Tape-level warp outputs. The mask is a value (the hole decision is a
/// threshold on forward weights; no gradient crosses it).
pub struct WarpVars<S> {
    pub image: Var,
    pub depth: Var,
    pub weights: Var,
    pub mask: Tensor<S>,
}

/// Differentiable forward warp. `image` is (3, H, W), `depth` (H, W)
/// strictly positive z-depth in the source camera. `skip` marks source
/// pixels (value 1) to leave out of the splat entirely, e.g. holes of a
/// previous warp whose colors are meaningless.
///
/// A bitwise-identity relative pose with no skips short-circuits to an
/// exact passthrough.
pub fn forward_warp_vars<S: Scalar>(
    tape: &mut Tape<S>,
    image: Var,
    depth: Var,
    rel: &RelativePose<S>,
    intr: &Intrinsics<S>,
    cfg: &WarpConfig,
    skip: Option<&Tensor<S>>,
) -> WarpVars<S> {
    let ishape = tape.shape_of(image).to_vec();
    assert_eq!(ishape.len(), 3);
    assert_eq!(ishape[0], 3, "warp images are (3, H, W)");
    let (h, w) = (ishape[1], ishape[2]);
    assert_eq!(tape.shape_of(depth), &[h, w], "depth shape");
    let n = h * w;

    let skips_nothing =
        skip.map(|m| m.data().iter().all(|&v| v == S::zero())).unwrap_or(true);
    if rel.is_identity() && skips_nothing {
        let ones = tape.constant(Tensor::ones(&[h, w]));
        return WarpVars { image, depth, weights: ones, mask: Tensor::zeros(&[h, w]) };
    }

    // Source-camera point for pixel k at depth z is (au*z, av*z, -z); after
    // the relative transform the target-frame point is (b*z + t) per axis.
    let grid = pixel_grid::<S>(w, h);
    let gd = grid.data();
    let mut bx = Vec::with_capacity(n);
    let mut by = Vec::with_capacity(n);
    let mut bz = Vec::with_capacity(n);
    let r = rel.r;
    for k in 0..n {
        let au = (gd[k] - intr.cx) / intr.fx;
        let av = -(gd[n + k] - intr.cy) / intr.fy;
        bx.push(r.m[0][0] * au + r.m[0][1] * av - r.m[0][2]);
        by.push(r.m[1][0] * au + r.m[1][1] * av - r.m[1][2]);
        bz.push(r.m[2][0] * au + r.m[2][1] * av - r.m[2][2]);
    }
    let bxv = tape.constant(Tensor::new(vec![n], bx));
    let byv = tape.constant(Tensor::new(vec![n], by));
    let bzv = tape.constant(Tensor::new(vec![n], bz));

    let z = tape.reshape(depth, &[n]);
    let zbx = tape.mul(z, bxv);
    let xn = tape.add_scalar(zbx, rel.t.x.as_f64());
    let zby = tape.mul(z, byv);
    let yn = tape.add_scalar(zby, rel.t.y.as_f64());
    let zbz = tape.mul(z, bzv);
    let zcam = tape.add_scalar(zbz, rel.t.z.as_f64());
    let zt = tape.neg(zcam); // positive in front of the target camera

    let ux = tape.div(xn, zt);
    let u = tape.mul_scalar(ux, intr.fx.as_f64());
    let u = tape.add_scalar(u, intr.cx.as_f64());
    let px = tape.mul_scalar(u, w as f64);
    let px = tape.add_scalar(px, -0.5);
    let vy = tape.div(yn, zt);
    let v = tape.mul_scalar(vy, -intr.fy.as_f64());
    let v = tape.add_scalar(v, intr.cy.as_f64());
    let py = tape.mul_scalar(v, h as f64);
    let py = tape.add_scalar(py, -0.5);

    let pxr = tape.reshape(px, &[1, n]);
    let pyr = tape.reshape(py, &[1, n]);
    let pos = tape.concat0(&[pxr, pyr]);

    // Drop sources that land behind the target camera or were skipped by
    // poisoning their positions; the splat ignores non-finite positions.
    let ztv = tape.val_rc(zt);
    let zeps = S::from_float(cfg.z_eps);
    let mut poison = vec![S::zero(); 2 * n];
    let mut any_bad = false;
    for k in 0..n {
        let dead = ztv.data()[k] < zeps
            || skip.map(|m| m.data()[k] != S::zero()).unwrap_or(false);
        if dead {
            poison[k] = S::nan();
            poison[n + k] = S::nan();
            any_bad = true;
        }
    }
    let pos = if any_bad {
        let pv = tape.constant(Tensor::new(vec![2, n], poison));
        tape.add(pos, pv)
    } else {
        pos
    };

    let zneg = tape.mul_scalar(zt, -cfg.beta);
    let img_rows = tape.reshape(image, &[3, n]);
    let zrow = tape.reshape(zt, &[1, n]);
    let payload = tape.concat0(&[img_rows, zrow]); // (4, N)

    let shifts = Rc::new(splat_shift_map(&tape.val_rc(pos), &tape.val_rc(zneg), h, w));
    let out = tape.softmax_splat(pos, zneg, payload, h, w, shifts);

    let num_img = tape.slice0(out, 0, 3);
    let num_z = tape.slice0(out, 3, 1);
    let num_z = tape.reshape(num_z, &[h, w]);
    let den1 = tape.slice0(out, 4, 1);
    let den = tape.reshape(den1, &[h, w]);

    let tau = S::from_float(cfg.tau_w);
    let denv = tape.val_rc(den);
    let mask_t = denv.map(|v| if v < tau { S::one() } else { S::zero() });
    let vis_t = mask_t.map(|v| S::one() - v);
    let mask_c = tape.constant(mask_t.clone());
    let vis_c = tape.constant(vis_t);
    // Holes divide by den + 1 and then multiply by 0, so the division never
    // sees a near-zero denominator.
    let den_guard = tape.add(den, mask_c);
    let dg1 = tape.reshape(den_guard, &[1, h, w]);
    let dg3 = tape.concat0(&[dg1, dg1, dg1]);
    let img_norm = tape.div(num_img, dg3);
    let vis1 = tape.reshape(vis_c, &[1, h, w]);
    let vis3 = tape.concat0(&[vis1, vis1, vis1]);
    let image_out = tape.mul(img_norm, vis3);
    let z_norm = tape.div(num_z, den_guard);
    let depth_out = tape.mul(z_norm, vis_c);

    WarpVars { image: image_out, depth: depth_out, weights: den, mask: mask_t }
}

/// Value-level forward warp with input validation.
pub fn forward_warp<S: Scalar>(
    image: &Tensor<S>,
    depth: &Tensor<S>,
    rel: &RelativePose<S>,
    intr: &Intrinsics<S>,
    cfg: &WarpConfig,
) -> Result<WarpResult<S>> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(Error::InvalidArgument(format!(
            "warp image must be (3, H, W), got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    if depth.shape() != [h, w] {
        return Err(Error::InvalidArgument(format!(
            "depth {:?} does not match image ({}, {})",
            depth.shape(),
            h,
            w
        )));
    }
    if !depth.data().iter().all(|&z| z > S::zero()) {
        return Err(Error::InvalidArgument("depth must be strictly positive".into()));
    }
    let mut tape = Tape::new();
    let iv = tape.constant(image.clone());
    let dv = tape.constant(depth.clone());
    let wv = forward_warp_vars(&mut tape, iv, dv, rel, intr, cfg, None);
    Ok(WarpResult {
        image: (*tape.val_rc(wv.image)).clone(),
        depth: (*tape.val_rc(wv.depth)).clone(),
        weights: (*tape.val_rc(wv.weights)).clone(),
        mask: OcclusionMask::new(wv.mask),
    })
}

/// `forward_warp` with a skip mask: source pixels marked 1 stay out of the
/// splat entirely. Used when re-warping an image whose holes carry no
/// meaningful color.
pub fn forward_warp_with_skip<S: Scalar>(
    image: &Tensor<S>,
    depth: &Tensor<S>,
    rel: &RelativePose<S>,
    intr: &Intrinsics<S>,
    cfg: &WarpConfig,
    skip: &Tensor<S>,
) -> Result<WarpResult<S>> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(Error::InvalidArgument(format!(
            "warp image must be (3, H, W), got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    if depth.shape() != [h, w] || skip.shape() != [h, w] {
        return Err(Error::InvalidArgument(format!(
            "depth {:?} / skip {:?} do not match image ({}, {})",
            depth.shape(),
            skip.shape(),
            h,
            w
        )));
    }
    if !depth.data().iter().all(|&z| z > S::zero()) {
        return Err(Error::InvalidArgument("depth must be strictly positive".into()));
    }
    let mut tape = Tape::new();
    let iv = tape.constant(image.clone());
    let dv = tape.constant(depth.clone());
    let wv = forward_warp_vars(&mut tape, iv, dv, rel, intr, cfg, Some(skip));
    Ok(WarpResult {
        image: (*tape.val_rc(wv.image)).clone(),
        depth: (*tape.val_rc(wv.depth)).clone(),
        weights: (*tape.val_rc(wv.weights)).clone(),
        mask: OcclusionMask::new(wv.mask),
    })
}

/// Composite the hole regions with a reconstruction: warped + mask * recon.
/// Warped holes are 0, so this is a per-pixel selection.
pub fn initial_fill<S: Scalar>(warped: &WarpResult<S>, novel_recon: &Tensor<S>) -> Tensor<S> {
    assert_eq!(novel_recon.shape(), warped.image.shape(), "fill shape");
    let (h, w) = (warped.image.shape()[1], warped.image.shape()[2]);
    let md = warped.mask.data().data();
    Tensor::from_fn(novel_recon.shape(), |i| {
        warped.image.data()[i] + md[i % (h * w)] * novel_recon.data()[i]
    })
}

/// Tape-level fill for training: warped_image + mask * recon.
pub fn initial_fill_vars<S: Scalar>(
    tape: &mut Tape<S>,
    warped_image: Var,
    mask: &Tensor<S>,
    novel_recon: Var,
) -> Var {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let m1 = tape.constant(mask.clone().reshaped(&[1, h, w]));
    let m3 = tape.concat0(&[m1, m1, m1]);
    let filled = tape.mul(novel_recon, m3);
    tape.add(warped_image, filled)
}

/// Horizontally flip an image or depth map (any rank >= 1; last axis is x).
pub fn flip_w<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let w = *t.shape().last().unwrap();
    let rows = t.len() / w.max(1);
    let mut data = Vec::with_capacity(t.len());
    for r in 0..rows {
        for i in 0..w {
            data.push(t.data()[r * w + (w - 1 - i)]);
        }
    }
    Tensor::new(t.shape().to_vec(), data)
}

/// The mirrored-world counterparts of an observation: flipped image, flipped
/// depth, and the pose that sees the mirrored scene the same way. Warping
/// these toward a target produces the symmetry-completion input.
pub fn mirror_inputs<S: Scalar>(
    image: &Tensor<S>,
    depth: &Tensor<S>,
    pose: &Pose<S>,
) -> (Tensor<S>, Tensor<S>, Pose<S>) {
    (flip_w(image), flip_w(depth), crate::geometry::mirror_pose(pose))
}

/// Warped depth with holes replaced by a fallback depth map (e.g. the depth
/// rendered directly at the novel view), for driving a reverse warp.
pub fn depth_with_fallback<S: Scalar>(warp: &WarpResult<S>, fallback: &Tensor<S>) -> Tensor<S> {
    assert_eq!(fallback.shape(), warp.depth.shape());
    let md = warp.mask.data().data();
    Tensor::from_fn(fallback.shape(), |i| {
        if md[i] == S::one() {
            fallback.data()[i]
        } else {
            warp.depth.data()[i]
        }
    })
}

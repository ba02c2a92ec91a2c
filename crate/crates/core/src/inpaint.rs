//! Symmetry-aware, style-modulated inpainting network.
//!
//! Three stages: a convolutional feature encoder applied to both the warped
//! image and its mirror-warped counterpart, a featurewise linear fusion that
//! lets the mirrored view fill what the direct view occludes, and a stack of
//! residual fast-Fourier-convolution blocks plus an upsampling decoder. All
//! convolutions in the blocks and the decoder are weight-modulated by styles
//! derived from the per-layer latent rows, so the fill stays consistent with
//! the inverted code.
//!
//! The spectral branch gets its global receptive field from an explicit
//! discrete Fourier transform over the spatial dims (built from fixed
//! cosine/sine coefficient matrices), a modulated 1x1 convolution on the
//! stacked real/imaginary channels, and the inverse transform.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::generator::LatentCode;
pub use crate::nn::modulate_weights as modulate_weights_var;
use crate::nn::{self, ParamSet, TapeParams};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct InpaintConfig {
    /// Input and output image resolution.
    pub resolution: usize,
    /// Encoder stem width; the bottleneck after 3 downsamplings is 8x this.
    pub base_channels: usize,
    /// Residual FFC blocks in the middle.
    pub n_blocks: usize,
    pub latent_layers: usize,
    pub latent_dim: usize,
    /// Epsilon inside the weight-demodulation square root.
    pub demod_eps: f64,
    /// Bottleneck channels are split local : global at (global_div - 1) : 1.
    pub global_div: usize,
    /// Off: convolutions use their raw weights and the latent is ignored.
    pub use_modulation: bool,
    /// Off: the mirror input is replaced by a zero image.
    pub use_symmetry: bool,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        InpaintConfig {
            resolution: 64,
            base_channels: 16,
            n_blocks: 4,
            latent_layers: 8,
            latent_dim: 64,
            demod_eps: 1e-8,
            global_div: 4,
            use_modulation: true,
            use_symmetry: true,
        }
    }
}

impl InpaintConfig {
    pub fn bottleneck(&self) -> usize {
        8 * self.base_channels
    }

    pub fn global_channels(&self) -> usize {
        self.bottleneck() / self.global_div
    }

    pub fn local_channels(&self) -> usize {
        self.bottleneck() - self.global_channels()
    }

    /// Modulated convolutions in forward order: 4 per FFC layer, 2 layers
    /// per block, then 3 upsampling convs and the output conv.
    pub fn n_mod_convs(&self) -> usize {
        self.n_blocks * 8 + 4
    }

    pub fn validate(&self) {
        assert!(
            self.resolution % 16 == 0,
            "resolution must survive 3 halvings with even spatial dims"
        );
        assert!(self.base_channels >= 1 && self.n_blocks >= 1);
        assert!(self.demod_eps > 0.0);
        assert!(self.global_div >= 2, "need both local and global channels");
        assert!(self.bottleneck() % self.global_div == 0);
        assert!(self.latent_layers >= 1 && self.latent_dim >= 1);
    }
}

/// Latent row feeding the k-th modulated conv out of `total`, over `layers`
/// rows: a monotone depth-to-level map, floor(k / total * layers).
pub fn style_level(idx: usize, total: usize, layers: usize) -> usize {
    debug_assert!(idx < total);
    idx * layers / total
}

pub struct InpaintNet<S> {
    pub cfg: InpaintConfig,
    pub params: ParamSet<S>,
}

/// Hands out the per-conv style vectors in forward order; `None` when
/// modulation is ablated (the counter still advances so the depth-to-level
/// map stays stable across ablations).
pub struct StyleFeed {
    w_plus: Var,
    next: usize,
    total: usize,
    layers: usize,
    enabled: bool,
}

impl StyleFeed {
    fn take<S: Scalar>(
        &mut self,
        tape: &mut Tape<S>,
        tp: &TapeParams,
        aff_name: &str,
        ci: usize,
    ) -> Option<Var> {
        let idx = self.next;
        self.next += 1;
        if !self.enabled {
            return None;
        }
        let level = style_level(idx, self.total, self.layers);
        let row = tape.slice0(self.w_plus, level, 1);
        let s = nn::dense_layer(tape, tp, aff_name, row);
        Some(tape.reshape(s, &[ci]))
    }
}

impl<S: Scalar> InpaintNet<S> {
    pub fn new(cfg: InpaintConfig, seed: u64) -> Self {
        cfg.validate();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = cfg.base_channels;
        nn::add_conv(&mut params, &mut rng, "i.enc.c0", 3, c, 3, 3);
        nn::add_conv(&mut params, &mut rng, "i.enc.d0", c, 2 * c, 3, 3);
        nn::add_conv(&mut params, &mut rng, "i.enc.d1", 2 * c, 4 * c, 3, 3);
        nn::add_conv(&mut params, &mut rng, "i.enc.d2", 4 * c, 8 * c, 3, 3);
        let bn = cfg.bottleneck();
        nn::add_conv(&mut params, &mut rng, "i.film.s", 2 * bn, bn, 3, 3);
        nn::add_conv(&mut params, &mut rng, "i.film.t", 2 * bn, bn, 3, 3);
        let (lo, gl) = (cfg.local_channels(), cfg.global_channels());
        let add_mod = |params: &mut ParamSet<S>, rng: &mut ChaCha8Rng, name: &str, ci, co, k| {
            nn::add_conv(params, rng, name, ci, co, k, k);
            nn::add_dense(params, rng, &format!("{}.aff", name), cfg.latent_dim, ci);
            *params.get_mut(&format!("{}.aff.b", name)) = Tensor::ones(&[ci]);
        };
        for b in 0..cfg.n_blocks {
            for l in 0..2 {
                let base = format!("i.b{}.f{}", b, l);
                add_mod(&mut params, &mut rng, &format!("{}.ll", base), lo, lo, 3);
                add_mod(&mut params, &mut rng, &format!("{}.gl", base), gl, lo, 3);
                add_mod(&mut params, &mut rng, &format!("{}.lg", base), lo, gl, 3);
                add_mod(&mut params, &mut rng, &format!("{}.sp", base), 2 * gl, 2 * gl, 1);
            }
        }
        add_mod(&mut params, &mut rng, "i.dec.u0", 8 * c, 4 * c, 3);
        add_mod(&mut params, &mut rng, "i.dec.u1", 4 * c, 2 * c, 3);
        add_mod(&mut params, &mut rng, "i.dec.u2", 2 * c, c, 3);
        add_mod(&mut params, &mut rng, "i.dec.out", c, 3, 3);
        InpaintNet { cfg, params }
    }

    fn mod_conv(
        &self,
        tape: &mut Tape<S>,
        tp: &TapeParams,
        name: &str,
        x: Var,
        style: Option<Var>,
        k: usize,
    ) -> Var {
        match style {
            Some(s) => nn::mod_conv_layer(tape, tp, name, x, s, k, k, true),
            // The style argument is unused on the unmodulated path; any var
            // satisfies the signature.
            None => nn::mod_conv_layer(tape, tp, name, x, x, k, k, false),
        }
    }

    /// Feature encoder: stem conv plus 3 downsampling conv layers, shared
    /// by the main and mirror inputs.
    pub fn extract_features_var(&self, tape: &mut Tape<S>, tp: &TapeParams, image: Var) -> Var {
        let r = self.cfg.resolution;
        assert_eq!(tape.shape_of(image), &[3, r, r], "inpaint input shape");
        let x = nn::conv_layer(tape, tp, "i.enc.c0", image, 3, 3);
        let mut x = tape.leaky_relu(x, 0.2);
        for name in ["i.enc.d0", "i.enc.d1", "i.enc.d2"] {
            let y = nn::conv_layer(tape, tp, name, x, 3, 3);
            let y = tape.leaky_relu(y, 0.2);
            x = tape.avg_pool2(y);
        }
        x
    }

    pub fn extract_features(&self, image: &Tensor<S>) -> Result<Tensor<S>> {
        let r = self.cfg.resolution;
        if image.shape() != [3, r, r] {
            return Err(Error::InvalidArgument(format!(
                "expected a (3, {}, {}) image, got {:?}",
                r,
                r,
                image.shape()
            )));
        }
        let mut tape = Tape::new();
        let tp = self.params.load_const(&mut tape);
        let iv = tape.constant(image.clone());
        let out = self.extract_features_var(&mut tape, &tp, iv);
        Ok((*tape.val_rc(out)).clone())
    }

    /// Featurewise linear fusion of the direct and mirror features:
    /// scale and shift maps are predicted from their channel concatenation,
    /// then applied to the direct features.
    pub fn film_fuse_var(&self, tape: &mut Tape<S>, tp: &TapeParams, f: Var, f_mirror: Var) -> Var {
        assert_eq!(tape.shape_of(f), tape.shape_of(f_mirror), "film shapes");
        let cat = tape.concat0(&[f, f_mirror]);
        let fs = nn::conv_layer(tape, tp, "i.film.s", cat, 3, 3);
        let ft = nn::conv_layer(tape, tp, "i.film.t", cat, 3, 3);
        let scaled = tape.mul(fs, f);
        tape.add(scaled, ft)
    }

    pub fn film_fuse(&self, f: &Tensor<S>, f_mirror: &Tensor<S>) -> Result<Tensor<S>> {
        if f.shape() != f_mirror.shape() {
            return Err(Error::InvalidArgument(format!(
                "feature shapes differ: {:?} vs {:?}",
                f.shape(),
                f_mirror.shape()
            )));
        }
        let mut tape = Tape::new();
        let tp = self.params.load_const(&mut tape);
        let fv = tape.constant(f.clone());
        let mv = tape.constant(f_mirror.clone());
        let out = self.film_fuse_var(&mut tape, &tp, fv, mv);
        Ok((*tape.val_rc(out)).clone())
    }

    fn spectral_transform(
        &self,
        tape: &mut Tape<S>,
        tp: &TapeParams,
        name: &str,
        x: Var,
        style: Option<Var>,
    ) -> Var {
        let c = tape.shape_of(x)[0];
        let y = dft_forward(tape, x);
        let y = self.mod_conv(tape, tp, name, y, style, 1);
        let y = tape.leaky_relu(y, 0.2);
        let out = dft_inverse(tape, y);
        debug_assert_eq!(tape.shape_of(out)[0], c);
        out
    }

    /// One fast-Fourier-convolution layer: the feature map splits into a
    /// local and a global band; three modulated 3x3 convs carry
    /// local-to-local, global-to-local, and local-to-global, while
    /// global-to-global goes through the spectral transform.
    fn ffc_layer(
        &self,
        tape: &mut Tape<S>,
        tp: &TapeParams,
        base: &str,
        x: Var,
        styles: &mut StyleFeed,
    ) -> Var {
        let (lo, gl) = (self.cfg.local_channels(), self.cfg.global_channels());
        let xl = tape.slice0(x, 0, lo);
        let xg = tape.slice0(x, lo, gl);
        let ll_name = format!("{}.ll", base);
        let s = styles.take(tape, tp, &format!("{}.aff", ll_name), lo);
        let y_ll = self.mod_conv(tape, tp, &ll_name, xl, s, 3);
        let gl_name = format!("{}.gl", base);
        let s = styles.take(tape, tp, &format!("{}.aff", gl_name), gl);
        let y_gl = self.mod_conv(tape, tp, &gl_name, xg, s, 3);
        let out_l = tape.add(y_ll, y_gl);
        let lg_name = format!("{}.lg", base);
        let s = styles.take(tape, tp, &format!("{}.aff", lg_name), lo);
        let y_lg = self.mod_conv(tape, tp, &lg_name, xl, s, 3);
        let sp_name = format!("{}.sp", base);
        let s = styles.take(tape, tp, &format!("{}.aff", sp_name), 2 * gl);
        let y_gg = self.spectral_transform(tape, tp, &sp_name, xg, s);
        let out_g = tape.add(y_lg, y_gg);
        tape.concat0(&[out_l, out_g])
    }

    /// Residual block of two FFC layers: x + FFC2(leaky(FFC1(x))). With all
    /// block weights zero this is the identity.
    pub fn ffc_block(
        &self,
        tape: &mut Tape<S>,
        tp: &TapeParams,
        block: usize,
        x: Var,
        styles: &mut StyleFeed,
    ) -> Var {
        let y = self.ffc_layer(tape, tp, &format!("i.b{}.f0", block), x, styles);
        let y = tape.leaky_relu(y, 0.2);
        let y = self.ffc_layer(tape, tp, &format!("i.b{}.f1", block), y, styles);
        tape.add(x, y)
    }

    pub fn style_feed(&self, w_plus: Var) -> StyleFeed {
        StyleFeed {
            w_plus,
            next: 0,
            total: self.cfg.n_mod_convs(),
            layers: self.cfg.latent_layers,
            enabled: self.cfg.use_modulation,
        }
    }

    /// Full differentiable pipeline: encode both inputs, fuse, run the FFC
    /// stack, decode back to image resolution, map into [-1, 1].
    pub fn inpaint_vars(
        &self,
        tape: &mut Tape<S>,
        tp: &TapeParams,
        initial: Var,
        mirror_initial: Var,
        w_plus: Var,
    ) -> Var {
        let cfg = &self.cfg;
        assert_eq!(
            tape.shape_of(w_plus),
            &[cfg.latent_layers, cfg.latent_dim],
            "latent shape"
        );
        let mirror_eff = if cfg.use_symmetry {
            mirror_initial
        } else {
            tape.zeros_like(mirror_initial)
        };
        let f = self.extract_features_var(tape, tp, initial);
        let fm = self.extract_features_var(tape, tp, mirror_eff);
        let mut x = self.film_fuse_var(tape, tp, f, fm);
        let mut styles = self.style_feed(w_plus);
        for b in 0..cfg.n_blocks {
            x = self.ffc_block(tape, tp, b, x, &mut styles);
        }
        for name in ["i.dec.u0", "i.dec.u1", "i.dec.u2"] {
            let ci = tape.shape_of(x)[0];
            let s = styles.take(tape, tp, &format!("{}.aff", name), ci);
            let up = tape.upsample_nearest2(x);
            let y = self.mod_conv(tape, tp, name, up, s, 3);
            x = tape.leaky_relu(y, 0.2);
        }
        let ci = tape.shape_of(x)[0];
        let s = styles.take(tape, tp, "i.dec.out.aff", ci);
        let y = self.mod_conv(tape, tp, "i.dec.out", x, s, 3);
        debug_assert_eq!(styles.next, cfg.n_mod_convs());
        tape.tanh(y)
    }

    /// Value-level inpainting with input validation.
    pub fn inpaint(
        &self,
        initial: &Tensor<S>,
        mirror_initial: &Tensor<S>,
        w_plus: &LatentCode<S>,
    ) -> Result<Tensor<S>> {
        let r = self.cfg.resolution;
        for (what, t) in [("initial", initial), ("mirror", mirror_initial)] {
            if t.shape() != [3, r, r] {
                return Err(Error::InvalidArgument(format!(
                    "{} image must be (3, {}, {}), got {:?}",
                    what,
                    r,
                    r,
                    t.shape()
                )));
            }
        }
        if w_plus.data.shape() != [self.cfg.latent_layers, self.cfg.latent_dim] {
            return Err(Error::InvalidArgument(format!(
                "latent must be ({}, {}), got {:?}",
                self.cfg.latent_layers,
                self.cfg.latent_dim,
                w_plus.data.shape()
            )));
        }
        let mut tape = Tape::new();
        let tp = self.params.load_const(&mut tape);
        let iv = tape.constant(initial.clone());
        let mv = tape.constant(mirror_initial.clone());
        let wv = tape.constant(w_plus.data.clone());
        let out = self.inpaint_vars(&mut tape, &tp, iv, mv, wv);
        Ok((*tape.val_rc(out)).clone())
    }
}

/// Cosine/sine DFT coefficient matrices for size n: C[u,a] = cos(2*pi*u*a/n),
/// S[u,a] = -sin(2*pi*u*a/n), so the transform kernel is C + iS. Both are
/// symmetric, which the inverse reuses.
fn dft_mats<S: Scalar>(n: usize) -> (Rc<Tensor<S>>, Rc<Tensor<S>>) {
    let mut c = Vec::with_capacity(n * n);
    let mut s = Vec::with_capacity(n * n);
    for u in 0..n {
        for a in 0..n {
            let ang = 2.0 * std::f64::consts::PI * (u * a) as f64 / n as f64;
            c.push(S::from_float(ang.cos()));
            s.push(S::from_float(-ang.sin()));
        }
    }
    (
        Rc::new(Tensor::new(vec![n, n], c)),
        Rc::new(Tensor::new(vec![n, n], s)),
    )
}

/// 2-D DFT of a real (c, h, w) map, packed as (2c, h, w): real parts then
/// imaginary parts.
pub fn dft_forward<S: Scalar>(tape: &mut Tape<S>, x: Var) -> Var {
    let shape = tape.shape_of(x).to_vec();
    assert_eq!(shape.len(), 3);
    let (h, w) = (shape[1], shape[2]);
    assert!(h % 2 == 0 && w % 2 == 0, "spectral transform needs even spatial dims");
    let (ch, sh) = dft_mats::<S>(h);
    let (cw, sw) = dft_mats::<S>(w);
    let cc = tape.lin2d(x, ch.clone(), cw.clone());
    let ss = tape.lin2d(x, sh.clone(), sw.clone());
    let re = tape.sub(cc, ss);
    let cs = tape.lin2d(x, ch, sw);
    let sc = tape.lin2d(x, sh, cw);
    let im = tape.add(cs, sc);
    tape.concat0(&[re, im])
}

/// Inverse of `dft_forward`: (2c, h, w) real/imag stack back to the real
/// (c, h, w) signal (imaginary residue is discarded by construction).
pub fn dft_inverse<S: Scalar>(tape: &mut Tape<S>, y: Var) -> Var {
    let shape = tape.shape_of(y).to_vec();
    assert_eq!(shape.len(), 3);
    let c2 = shape[0];
    assert!(c2 % 2 == 0, "real/imag channel stack must be even");
    let c = c2 / 2;
    let (h, w) = (shape[1], shape[2]);
    let (ch, sh) = dft_mats::<S>(h);
    let (cw, sw) = dft_mats::<S>(w);
    let yre = tape.slice0(y, 0, c);
    let yim = tape.slice0(y, c, c);
    let a = tape.lin2d(yre, ch.clone(), cw.clone());
    let b = tape.lin2d(yim, sh.clone(), cw);
    let cterm = tape.lin2d(yim, ch, sw.clone());
    let d = tape.lin2d(yre, sh, sw);
    let ab = tape.add(a, b);
    let abc = tape.add(ab, cterm);
    let sum = tape.sub(abc, d);
    tape.mul_scalar(sum, 1.0 / (h * w) as f64)
}

fn check_even_spatial<S: Scalar>(t: &Tensor<S>) -> Result<()> {
    if t.rank() != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected a (c, h, w) map, got {:?}",
            t.shape()
        )));
    }
    if t.shape()[1] % 2 != 0 || t.shape()[2] % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "spectral transform needs even spatial dims, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Value-level forward DFT with input validation.
pub fn dft2<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    check_even_spatial(x)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = dft_forward(&mut tape, xv);
    Ok((*tape.val_rc(y)).clone())
}

/// Value-level inverse DFT with input validation.
pub fn idft2<S: Scalar>(y: &Tensor<S>) -> Result<Tensor<S>> {
    check_even_spatial(y)?;
    if y.shape()[0] % 2 != 0 {
        return Err(Error::InvalidArgument(
            "real/imag channel stack must be even".into(),
        ));
    }
    let mut tape = Tape::new();
    let yv = tape.constant(y.clone());
    let x = dft_inverse(&mut tape, yv);
    Ok((*tape.val_rc(x)).clone())
}

/// Value-level weight modulation for flat (co, ci*k) conv weights and a
/// (ci) style vector: scale columns per input channel, renormalize each
/// output row to unit norm (epsilon inside the root).
pub fn modulate_weights<S: Scalar>(
    w: &Tensor<S>,
    style: &Tensor<S>,
    eps: f64,
) -> Result<Tensor<S>> {
    if w.rank() != 2 || style.rank() != 1 {
        return Err(Error::InvalidArgument(
            "weights must be (co, ci*k) and style (ci)".into(),
        ));
    }
    let ci = style.shape()[0];
    if ci == 0 || w.shape()[1] % ci != 0 {
        return Err(Error::InvalidArgument(format!(
            "style length {} does not divide weight columns {}",
            ci,
            w.shape()[1]
        )));
    }
    let mut tape = Tape::new();
    let wv = tape.constant(w.clone());
    let sv = tape.constant(style.clone());
    let out = nn::modulate_weights(&mut tape, wv, sv, eps);
    Ok((*tape.val_rc(out)).clone())
}

//! Optimization-based editing on top of the synthesis pipeline: joint
//! latent+noise inversion of a single image, generator fine-tuning against
//! pseudo ground truth synthesized at several novel views, latent-direction
//! attribute edits, and reference-based style substitution.
//!
//! Both optimizers are monotone: a step is kept only if it does not
//! increase the objective, otherwise the parameters roll back and the step
//! size halves. That makes descent an invariant rather than a hope, which
//! the tests assert directly.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::Encoder;
use crate::generator::{Generator, LatentCode, NoiseInput, SamplingConfig};
use crate::geometry::{relative_pose, Intrinsics, Pose};
use crate::inpaint::InpaintNet;
use crate::losses::PerceptualExtractor;
use crate::nn::{self, ParamSet};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::training::{render_image_var, sample_novel_pose, TrainConfig};
use crate::warping::{forward_warp, initial_fill, mirror_inputs, WarpConfig};
use crate::{Error, Result};

/// A latent-space attribute direction with its application strength.
#[derive(Clone, Debug)]
pub struct EditDirection<S> {
    /// (layers, dim) shift, same shape as a latent code. Supplied
    /// externally; no direction discovery happens here.
    pub n_att: Tensor<S>,
    pub alpha: f64,
}

impl<S: Scalar> EditDirection<S> {
    pub fn new(n_att: Tensor<S>, alpha: f64) -> Result<Self> {
        if n_att.rank() != 2 {
            return Err(Error::InvalidArgument(format!(
                "edit direction must be (layers, dim), got {:?}",
                n_att.shape()
            )));
        }
        if !n_att.data().iter().all(|v| v.is_finite()) || !alpha.is_finite() {
            return Err(Error::InvalidArgument("edit direction must be finite".into()));
        }
        Ok(EditDirection { n_att, alpha })
    }

    /// w + alpha * n_att. Zero strength returns the code unchanged, bit for
    /// bit, so a no-op edit is exactly the identity.
    pub fn apply(&self, w: &LatentCode<S>) -> LatentCode<S> {
        if self.alpha == 0.0 {
            return w.clone();
        }
        assert_eq!(w.data.shape(), self.n_att.shape(), "direction shape");
        let a = S::from_float(self.alpha);
        LatentCode::new(w.data.zip_map(&self.n_att, |wv, nv| wv + a * nv))
    }
}

/// Knobs for inversion and generator fine-tuning.
#[derive(Clone, Copy, Debug)]
pub struct OptConfig {
    pub inversion_steps: usize,
    pub tuning_steps: usize,
    /// Weight of the noise regularizer in the inversion objective.
    pub lambda_noise: f64,
    /// Weight of the pseudo-view sum in the tuning objective.
    pub lambda_mv: f64,
    /// Pixel and perceptual weights inside the per-view tuning loss.
    pub lambda_mse: f64,
    pub lambda_perc: f64,
    /// Pseudo ground-truth views synthesized for tuning.
    pub n_views: usize,
    pub lr_latent: f64,
    pub lr_generator: f64,
    /// Pseudo-view pose ranges; the training pose sampler is reused.
    pub yaw_range: f64,
    pub pitch_range: f64,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            inversion_steps: 500,
            tuning_steps: 300,
            lambda_noise: 1e3,
            lambda_mv: 1.0,
            lambda_mse: 1.0,
            lambda_perc: 1.0,
            n_views: 4,
            lr_latent: 1e-2,
            lr_generator: 1e-3,
            yaw_range: 0.6,
            pitch_range: 0.3,
            seed: 0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) {
        assert!(self.inversion_steps > 0 && self.tuning_steps > 0);
        assert!(self.lambda_noise >= 0.0 && self.lambda_mv >= 0.0);
        assert!(self.lambda_mse >= 0.0 && self.lambda_perc >= 0.0);
        assert!(self.lr_latent > 0.0 && self.lr_generator > 0.0);
        assert!(self.yaw_range >= 0.0 && self.pitch_range >= 0.0);
    }
}

fn cyclic_shift_matrix<S: Scalar>(n: usize) -> Tensor<S> {
    Tensor::from_fn(&[n, n], |k| {
        let (i, j) = (k / n, k % n);
        if j == (i + 1) % n {
            S::one()
        } else {
            S::zero()
        }
    })
}

fn identity_matrix<S: Scalar>(n: usize) -> Tensor<S> {
    Tensor::from_fn(&[n, n], |k| if k / n == k % n { S::one() } else { S::zero() })
}

/// Noise prior: mean square of the entries plus squared one-pixel cyclic
/// autocorrelations at every dyadic scale. Zero exactly on zero noise;
/// penalizes both large and spatially correlated noise, so the inversion
/// cannot hide image content in the noise maps.
pub fn noise_regularizer_var<S: Scalar>(tape: &mut Tape<S>, noise: Var) -> Var {
    let shape = tape.shape_of(noise).to_vec();
    assert_eq!(shape.len(), 3, "noise maps are (c, r, r)");
    assert_eq!(shape[1], shape[2], "noise maps are square");
    let n = shape.iter().product::<usize>();
    let ss = tape.sum_squares(noise);
    let mut total = tape.mul_scalar(ss, 1.0 / n as f64);
    let mut x = noise;
    loop {
        let r = tape.shape_of(x)[1];
        let p = Rc::new(cyclic_shift_matrix::<S>(r));
        let eye = Rc::new(identity_matrix::<S>(r));
        let down = tape.lin2d(x, p.clone(), eye.clone());
        let right = tape.lin2d(x, eye, p);
        for rolled in [down, right] {
            let prod = tape.mul(x, rolled);
            let corr = tape.mean_all(prod);
            let sq = tape.mul(corr, corr);
            total = tape.add(total, sq);
        }
        if r < 8 || r % 2 != 0 {
            break;
        }
        x = tape.avg_pool2(x);
    }
    total
}

pub fn noise_regularizer<S: Scalar>(noise: &Tensor<S>) -> S {
    let mut tape = Tape::new();
    let nv = tape.constant(noise.clone());
    let reg = noise_regularizer_var(&mut tape, nv);
    tape.val(reg).data()[0]
}

/// Monotone Adam descent with step-size backoff. The objective closure
/// rebuilds the loss graph for the parameter values in `tp`; rejected steps
/// roll back both the parameters and the optimizer moments. The rate halves
/// on rejection and recovers geometrically across accepted steps (capped at
/// the configured rate), so one bad region does not cripple the rest of the
/// run.
fn descend<S: Scalar>(
    mut params: ParamSet<S>,
    lr0: f64,
    steps: usize,
    what: &str,
    mut objective: impl FnMut(&mut Tape<S>, &nn::TapeParams) -> Var,
) -> Result<(ParamSet<S>, Vec<f64>)> {
    let mut lr = lr0;
    let mut opt = Adam::new(AdamConfig::with_lr(lr));
    let eval = |params: &ParamSet<S>,
                objective: &mut dyn FnMut(&mut Tape<S>, &nn::TapeParams) -> Var|
     -> Result<(f64, BTreeMap<String, Tensor<S>>)> {
        let mut tape = Tape::new();
        let tp = params.load(&mut tape);
        let loss = objective(&mut tape, &tp);
        let v = tape.val(loss).data()[0].as_f64();
        if !v.is_finite() {
            return Err(Error::Optimization(format!("{} loss is not finite", what)));
        }
        let grads = tape.backward(loss);
        Ok((v, tp.grad_tensors(&tape, &grads)))
    };
    let (v0, mut gmap) = eval(&params, &mut objective)?;
    let mut history = vec![v0];
    let mut best_loss = v0;
    let mut best_params = params.clone();
    let mut opt_state = opt.export_state();
    for _ in 0..steps {
        if best_loss == 0.0 {
            break;
        }
        opt.step(&mut params, &gmap);
        let (v, g) = eval(&params, &mut objective)?;
        if v <= best_loss {
            best_loss = v;
            best_params = params.clone();
            gmap = g;
            history.push(v);
            opt_state = opt.export_state();
            let recovered = (lr * 1.5).min(lr0);
            if recovered != lr {
                lr = recovered;
                opt = Adam::new(AdamConfig::with_lr(lr));
                opt.import_state(opt_state.0, &opt_state.1);
            }
        } else {
            params = best_params.clone();
            lr /= 2.0;
            if lr < 1e-12 {
                break;
            }
            opt = Adam::new(AdamConfig::with_lr(lr));
            opt.import_state(opt_state.0, &opt_state.1);
        }
    }
    Ok((best_params, history))
}

pub struct InversionResult<S> {
    pub latent: LatentCode<S>,
    pub noise: NoiseInput<S>,
    /// Accepted objective values, starting at the initialization.
    pub history: Vec<f64>,
    pub initial_mse: f64,
    pub final_mse: f64,
}

fn render_mse<S: Scalar>(
    gen: &Generator<S>,
    w: &LatentCode<S>,
    n: &NoiseInput<S>,
    image: &Tensor<S>,
    pose: &Pose<S>,
    intr: &Intrinsics<S>,
    sc: &SamplingConfig,
) -> f64 {
    let res = image.shape()[2];
    let view = gen.render_view(w, n, intr, pose, res, sc);
    let diff: f64 = view
        .color
        .data()
        .iter()
        .zip(image.data())
        .map(|(a, b)| {
            let d = (*a - *b).as_f64();
            d * d
        })
        .sum();
    diff / image.len() as f64
}

/// Joint latent+noise inversion from a chosen starting point.
#[allow(clippy::too_many_arguments)]
pub fn invert_from<S: Scalar>(
    gen: &Generator<S>,
    image: &Tensor<S>,
    pose: &Pose<S>,
    intr: &Intrinsics<S>,
    sc: &SamplingConfig,
    cfg: &OptConfig,
    w_init: &LatentCode<S>,
    n_init: &NoiseInput<S>,
) -> Result<InversionResult<S>> {
    cfg.validate();
    if image.rank() != 3 || image.shape()[0] != 3 || image.shape()[1] != image.shape()[2] {
        return Err(Error::InvalidArgument(format!(
            "inversion target must be a square (3, r, r) image, got {:?}",
            image.shape()
        )));
    }
    let res = image.shape()[2];
    let mut params = ParamSet::new();
    params.insert("opt.w", w_init.data.clone());
    params.insert("opt.n", n_init.data.clone());
    let lambda_n = cfg.lambda_noise;
    let (best, history) = descend(params, cfg.lr_latent, cfg.inversion_steps, "inversion", {
        let image = image.clone();
        move |tape, tp| {
            let gtp = gen.params.load_const(tape);
            let wv = tp.var("opt.w");
            let nv = tp.var("opt.n");
            let recon = render_image_var(tape, gen, &gtp, wv, nv, intr, pose, res, sc);
            let target = tape.constant(image.clone());
            let mse = tape.mse(recon, target);
            if lambda_n == 0.0 {
                mse
            } else {
                let reg = noise_regularizer_var(tape, nv);
                let wreg = tape.mul_scalar(reg, lambda_n);
                tape.add(mse, wreg)
            }
        }
    })?;
    let latent = LatentCode::new(best.get("opt.w").clone());
    let noise = NoiseInput::new(best.get("opt.n").clone());
    let initial_mse = render_mse(gen, w_init, n_init, image, pose, intr, sc);
    let final_mse = render_mse(gen, &latent, &noise, image, pose, intr, sc);
    Ok(InversionResult { latent, noise, history, initial_mse, final_mse })
}

/// Inversion from the default start: zero latent, zero noise.
pub fn invert<S: Scalar>(
    gen: &Generator<S>,
    image: &Tensor<S>,
    pose: &Pose<S>,
    intr: &Intrinsics<S>,
    sc: &SamplingConfig,
    cfg: &OptConfig,
) -> Result<InversionResult<S>> {
    let w0 = LatentCode::zeros(gen.cfg.latent_layers, gen.cfg.latent_dim);
    let n0 = NoiseInput::zeros(gen.cfg.plane_resolution);
    invert_from(gen, image, pose, intr, sc, cfg, &w0, &n0)
}

/// The full single-image synthesis stack, bundled for the editing paths and
/// the command-line tools.
pub struct Pipeline<S> {
    pub generator: Generator<S>,
    pub encoder: Encoder<S>,
    pub inpaint: InpaintNet<S>,
    pub intrinsics: Intrinsics<S>,
    pub sampling: SamplingConfig,
    pub warp: WarpConfig,
}

/// Intermediate products of the warp stage, before inpainting.
pub struct WarpStage<S> {
    /// Warped image with holes filled from the latent reconstruction.
    pub initial: Tensor<S>,
    /// Same construction from the mirrored input.
    pub mirror: Tensor<S>,
    /// 1 where the warp left a hole.
    pub mask: Tensor<S>,
}

impl<S: Scalar> Pipeline<S> {
    pub fn resolution(&self) -> usize {
        self.inpaint.cfg.resolution
    }

    pub fn validate(&self) {
        let r = self.resolution();
        assert_eq!(self.encoder.cfg.resolution, r, "encoder/inpainting resolution");
        assert_eq!(self.encoder.cfg.latent_layers, self.generator.cfg.latent_layers);
        assert_eq!(self.encoder.cfg.latent_dim, self.generator.cfg.latent_dim);
        assert_eq!(self.inpaint.cfg.latent_layers, self.generator.cfg.latent_layers);
        assert_eq!(self.inpaint.cfg.latent_dim, self.generator.cfg.latent_dim);
    }

    /// Warp `image` from `pose` to `target`, with depth rendered from
    /// `geometry_code` and hole fill rendered from `fill_code`. The two
    /// codes only differ during reference-based style editing.
    pub fn warp_stage(
        &self,
        geometry_code: &LatentCode<S>,
        fill_code: &LatentCode<S>,
        image: &Tensor<S>,
        pose: &Pose<S>,
        target: &Pose<S>,
    ) -> Result<WarpStage<S>> {
        let res = self.resolution();
        if image.shape() != [3, res, res] {
            return Err(Error::InvalidArgument(format!(
                "pipeline expects (3, {}, {}) images, got {:?}",
                res,
                res,
                image.shape()
            )));
        }
        let noise = NoiseInput::zeros(self.generator.cfg.plane_resolution);
        let depth = self
            .generator
            .render_view(geometry_code, &noise, &self.intrinsics, pose, res, &self.sampling)
            .depth;
        let fill = self
            .generator
            .render_view(fill_code, &noise, &self.intrinsics, target, res, &self.sampling)
            .color;
        let rel = relative_pose(pose, target);
        let fwd = forward_warp(image, &depth, &rel, &self.intrinsics, &self.warp)?;
        let initial = initial_fill(&fwd, &fill);
        let (mimg, mdepth, mpose) = mirror_inputs(image, &depth, pose);
        let mrel = relative_pose(&mpose, target);
        let mwarp = forward_warp(&mimg, &mdepth, &mrel, &self.intrinsics, &self.warp)?;
        let mirror = initial_fill(&mwarp, &fill);
        Ok(WarpStage { initial, mirror, mask: fwd.mask.data().clone() })
    }

    /// Warp + inpaint with separate geometry and style codes.
    pub fn synthesize_with_codes(
        &self,
        geometry_code: &LatentCode<S>,
        fill_code: &LatentCode<S>,
        image: &Tensor<S>,
        pose: &Pose<S>,
        target: &Pose<S>,
    ) -> Result<Tensor<S>> {
        let stage = self.warp_stage(geometry_code, fill_code, image, pose, target)?;
        self.inpaint.inpaint(&stage.initial, &stage.mirror, fill_code)
    }

    /// The standard forward path: invert, warp, inpaint.
    pub fn synthesize_view(
        &self,
        image: &Tensor<S>,
        pose: &Pose<S>,
        target: &Pose<S>,
    ) -> Result<Tensor<S>> {
        let code = self.encoder.encode(image)?;
        self.synthesize_with_codes(&code, &code, image, pose, target)
    }

    /// Style substitution: the source supplies the geometry (its own
    /// inverted depth drives the warp), the reference supplies the latent
    /// used for hole fill and style modulation. The reference pose is part
    /// of the interface but the fill renders at the target camera, so it is
    /// not consumed.
    pub fn reference_style_synthesize(
        &self,
        source: &Tensor<S>,
        source_pose: &Pose<S>,
        reference: &Tensor<S>,
        _reference_pose: &Pose<S>,
        target: &Pose<S>,
    ) -> Result<Tensor<S>> {
        let code_src = self.encoder.encode(source)?;
        let code_ref = self.encoder.encode(reference)?;
        self.synthesize_with_codes(&code_src, &code_ref, source, source_pose, target)
    }
}

/// One pseudo ground-truth view for tuning.
#[derive(Clone, Debug)]
pub struct PseudoView<S> {
    pub image: Tensor<S>,
    pub pose: Pose<S>,
}

/// Synthesize `n` novel views of the input through the full pipeline. Every
/// sampled pose is guaranteed to differ from the input pose.
pub fn multiview_set<S: Scalar>(
    pipe: &Pipeline<S>,
    image: &Tensor<S>,
    pose: &Pose<S>,
    n: usize,
    cfg: &OptConfig,
) -> Result<Vec<PseudoView<S>>> {
    cfg.validate();
    let sampler = TrainConfig {
        yaw_range: cfg.yaw_range,
        pitch_range: cfg.pitch_range,
        ..TrainConfig::default()
    };
    let radius = pipe.generator.cfg.orbit_radius;
    let mut views = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream((4 << 48) ^ i as u64);
        let mut target: Pose<S> = sample_novel_pose(&mut rng, &sampler, radius);
        let mut tries = 0;
        while &target == pose {
            tries += 1;
            if tries > 100 {
                return Err(Error::InvalidArgument(
                    "pose sampler cannot avoid the input pose; widen the ranges".into(),
                ));
            }
            target = sample_novel_pose(&mut rng, &sampler, radius);
        }
        let synthesized = pipe.synthesize_view(image, pose, &target)?;
        views.push(PseudoView { image: synthesized, pose: target });
    }
    Ok(views)
}

fn view_loss_var<S: Scalar>(
    tape: &mut Tape<S>,
    recon: Var,
    target: Var,
    cfg: &OptConfig,
    perc: &PerceptualExtractor<S>,
) -> Var {
    let mse = tape.mse(recon, target);
    let mut total = tape.mul_scalar(mse, cfg.lambda_mse);
    if cfg.lambda_perc != 0.0 {
        let d = perc.distance_var(tape, recon, target);
        let wd = tape.mul_scalar(d, cfg.lambda_perc);
        total = tape.add(total, wd);
    }
    total
}

/// Pixel + perceptual loss of the render against one view, as the tuner
/// sees it.
#[allow(clippy::too_many_arguments)]
pub fn view_loss<S: Scalar>(
    gen: &Generator<S>,
    w: &LatentCode<S>,
    noise: &NoiseInput<S>,
    image: &Tensor<S>,
    pose: &Pose<S>,
    intr: &Intrinsics<S>,
    sc: &SamplingConfig,
    cfg: &OptConfig,
    perc: &PerceptualExtractor<S>,
) -> f64 {
    let res = image.shape()[2];
    let mut tape = Tape::new();
    let gtp = gen.params.load_const(&mut tape);
    let wv = tape.constant(w.data.clone());
    let nv = tape.constant(noise.data.clone());
    let recon = render_image_var(&mut tape, gen, &gtp, wv, nv, intr, pose, res, sc);
    let target = tape.constant(image.clone());
    let loss = view_loss_var(&mut tape, recon, target, cfg, perc);
    tape.val(loss).data()[0].as_f64()
}

pub struct TuneResult<S> {
    pub generator: Generator<S>,
    /// Accepted objective values, starting at the untouched generator.
    pub history: Vec<f64>,
}

/// Fine-tune the generator so its render of the frozen code matches the
/// input view, regularized by the pseudo-view set. The latent is never
/// touched; only generator parameters move.
#[allow(clippy::too_many_arguments)]
pub fn pivotal_tune<S: Scalar>(
    gen: &Generator<S>,
    w: &LatentCode<S>,
    noise: &NoiseInput<S>,
    image: &Tensor<S>,
    pose: &Pose<S>,
    views: &[PseudoView<S>],
    intr: &Intrinsics<S>,
    sc: &SamplingConfig,
    cfg: &OptConfig,
    perc: &PerceptualExtractor<S>,
) -> Result<TuneResult<S>> {
    cfg.validate();
    if image.rank() != 3 || image.shape()[0] != 3 || image.shape()[1] != image.shape()[2] {
        return Err(Error::InvalidArgument(format!(
            "tuning target must be a square (3, r, r) image, got {:?}",
            image.shape()
        )));
    }
    let res = image.shape()[2];
    for v in views {
        if v.image.shape() != image.shape() {
            return Err(Error::InvalidArgument(
                "pseudo-view resolution differs from the input view".into(),
            ));
        }
    }
    let (best, history) =
        descend(gen.params.clone(), cfg.lr_generator, cfg.tuning_steps, "tuning", {
            let image = image.clone();
            move |tape, tp| {
                let wv = tape.constant(w.data.clone());
                let nv = tape.constant(noise.data.clone());
                let recon = render_image_var(tape, gen, tp, wv, nv, intr, pose, res, sc);
                let target = tape.constant(image.clone());
                let mut total = view_loss_var(tape, recon, target, cfg, perc);
                for v in views {
                    let wv = tape.constant(w.data.clone());
                    let nv = tape.constant(noise.data.clone());
                    let recon =
                        render_image_var(tape, gen, tp, wv, nv, intr, &v.pose, res, sc);
                    let vt = tape.constant(v.image.clone());
                    let vl = view_loss_var(tape, recon, vt, cfg, perc);
                    let wvl = tape.mul_scalar(vl, cfg.lambda_mv);
                    total = tape.add(total, wvl);
                }
                total
            }
        })?;
    Ok(TuneResult { generator: Generator { cfg: gen.cfg, params: best }, history })
}

/// Render the edited code at a novel camera: R(G(w + alpha * n_att), c).
#[allow(clippy::too_many_arguments)]
pub fn edit<S: Scalar>(
    gen: &Generator<S>,
    w: &LatentCode<S>,
    noise: &NoiseInput<S>,
    direction: &EditDirection<S>,
    pose: &Pose<S>,
    intr: &Intrinsics<S>,
    resolution: usize,
    sc: &SamplingConfig,
) -> Tensor<S> {
    let shifted = direction.apply(w);
    gen.render_view(&shifted, noise, intr, pose, resolution, sc).color
}

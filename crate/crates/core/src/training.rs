//! The two training loops: latent encoder first, then the inpainting
//! network against a discriminator, with the generator and encoder frozen.
//!
//! Real-data steps follow the warp/re-warp strategy: the input is warped to
//! a sampled novel view and inpainted there (no ground truth, consistency
//! and adversarial supervision only), and the raw warped image is warped
//! back to the input view and inpainted there (full reconstruction
//! supervision against the input). Synthetic steps render the same scene
//! from two cameras so the target view has ground truth everywhere.
//!
//! Every step derives its randomness from (seed, iteration), so training is
//! resumable to bitwise-identical trajectories from any checkpoint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::Encoder;
use crate::generator::{
    render_rays, Generator, LatentCode, NoiseInput, SamplingConfig,
};
use crate::geometry::{
    orbit_pose, rays_for_camera, relative_pose, Intrinsics, Pose, Vec3,
};
use crate::inpaint::InpaintNet;
use crate::losses::{
    discriminator_adv_loss_var, inpaint_total_loss_var, inversion_loss_var, IdentityEmbedder,
    InpaintRole, InpaintedSample, LossWeights, PerceptualExtractor,
};
use crate::nn::{self, ParamSet};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::warping::{
    depth_with_fallback, forward_warp, forward_warp_with_skip, initial_fill, mirror_inputs,
    WarpConfig,
};
use crate::{Error, Result};

/// Knobs for both loops. Iteration counts are toy-scale defaults; full-scale
/// runs use the same code with bigger numbers.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub encoder_iterations: usize,
    pub inpaint_iterations: usize,
    /// Images per encoder update.
    pub encoder_batch: usize,
    /// Source images (or synthetic pairs) per inpainting update.
    pub inpaint_batch: usize,
    pub lr_encoder: f64,
    pub lr_inpaint: f64,
    pub lr_discriminator: f64,
    /// Novel poses draw yaw from [-yaw_range, yaw_range] radians.
    pub yaw_range: f64,
    pub pitch_range: f64,
    /// Discriminator stem width.
    pub d_base_channels: usize,
    pub use_modulation: bool,
    pub use_consistency_loss: bool,
    pub use_symmetry: bool,
    pub use_synth_data: bool,
    pub seed: u64,
    /// Optional early stop: halt once the trailing-window mean loss falls to
    /// this fraction of the initial-window mean.
    pub stop_ratio: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder_iterations: 20_000,
            inpaint_iterations: 10_000,
            encoder_batch: 4,
            inpaint_batch: 2,
            lr_encoder: 1e-4,
            lr_inpaint: 1e-3,
            lr_discriminator: 1e-4,
            yaw_range: 0.6,
            pitch_range: 0.3,
            d_base_channels: 8,
            use_modulation: true,
            use_consistency_loss: true,
            use_symmetry: true,
            use_synth_data: true,
            seed: 0,
            stop_ratio: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) {
        assert!(self.encoder_iterations > 0 && self.inpaint_iterations > 0);
        assert!(self.encoder_batch > 0 && self.inpaint_batch > 0);
        assert!(self.lr_encoder > 0.0 && self.lr_inpaint > 0.0 && self.lr_discriminator > 0.0);
        assert!(self.yaw_range >= 0.0 && self.pitch_range >= 0.0);
        assert!(self.d_base_channels > 0);
        if let Some(r) = self.stop_ratio {
            assert!(r > 0.0 && r < 1.0, "stop ratio must be in (0,1)");
        }
    }
}

/// Stream-separated deterministic rng: every (domain, iteration) pair gets
/// its own ChaCha stream, so steps are independent of execution history.
fn iter_rng(seed: u64, domain: u64, iter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 48) ^ iter);
    rng
}

const DOMAIN_DATASET: u64 = 1;
const DOMAIN_ENCODER: u64 = 2;
const DOMAIN_INPAINT: u64 = 3;

/// Orbit pose with yaw and pitch drawn uniformly from the configured ranges.
pub fn sample_novel_pose<S: Scalar>(
    rng: &mut ChaCha8Rng,
    cfg: &TrainConfig,
    orbit_radius: f64,
) -> Pose<S> {
    let yaw = if cfg.yaw_range > 0.0 {
        rng.gen_range(-cfg.yaw_range..cfg.yaw_range)
    } else {
        0.0
    };
    let pitch = if cfg.pitch_range > 0.0 {
        rng.gen_range(-cfg.pitch_range..cfg.pitch_range)
    } else {
        0.0
    };
    orbit_pose(
        Vec3::zero(),
        S::from_float(orbit_radius),
        S::from_float(yaw),
        S::from_float(pitch),
    )
}

/// One training observation: an image and the camera that saw it.
#[derive(Clone, Debug)]
pub struct TrainSample<S> {
    pub image: Tensor<S>,
    pub pose: Pose<S>,
}

/// Generator-rendered stand-in for a real dataset: held-out latents rendered
/// at sampled poses, so the full real-data path runs with zero external
/// assets.
pub fn make_synthetic_dataset<S: Scalar>(
    gen: &Generator<S>,
    n: usize,
    resolution: usize,
    intr: &Intrinsics<S>,
    sc: &SamplingConfig,
    cfg: &TrainConfig,
) -> Vec<TrainSample<S>> {
    (0..n)
        .map(|i| {
            let mut rng = iter_rng(cfg.seed, DOMAIN_DATASET, i as u64);
            let latent = LatentCode::sample(&mut rng, gen.cfg.latent_layers, gen.cfg.latent_dim);
            let noise = NoiseInput::sample(&mut rng, gen.cfg.plane_resolution);
            let pose = sample_novel_pose(&mut rng, cfg, gen.cfg.orbit_radius);
            let view = gen.render_view(&latent, &noise, intr, &pose, resolution, sc);
            TrainSample { image: view.color, pose }
        })
        .collect()
}

/// Differentiable render straight to a [-1, 1] image tensor.
pub fn render_image_var<S: Scalar>(
    tape: &mut Tape<S>,
    gen: &Generator<S>,
    gen_tp: &nn::TapeParams,
    latent: Var,
    noise: Var,
    intr: &Intrinsics<S>,
    pose: &Pose<S>,
    resolution: usize,
    sc: &SamplingConfig,
) -> Var {
    let tri = gen.generate_triplane(tape, gen_tp, latent, noise);
    let field = gen.field(tri, gen_tp);
    let rays = rays_for_camera(intr, pose, resolution, resolution);
    let rv = render_rays(tape, &field, &rays, sc);
    let img = tape.reshape(rv.color, &[3, resolution, resolution]);
    let x2 = tape.mul_scalar(img, 2.0);
    tape.add_scalar(x2, -1.0)
}

#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorConfig {
    pub resolution: usize,
    pub base_channels: usize,
}

/// Small convolutional real/fake classifier with a probability output.
pub struct Discriminator<S> {
    pub cfg: DiscriminatorConfig,
    pub params: ParamSet<S>,
}

impl<S: Scalar> Discriminator<S> {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Self {
        assert!(cfg.resolution % 8 == 0, "discriminator pools three times");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = cfg.base_channels;
        nn::add_conv(&mut params, &mut rng, "d.c0", 3, c, 3, 3);
        nn::add_conv(&mut params, &mut rng, "d.c1", c, 2 * c, 3, 3);
        nn::add_conv(&mut params, &mut rng, "d.c2", 2 * c, 2 * c, 3, 3);
        nn::add_dense(&mut params, &mut rng, "d.head", 2 * c, 1);
        Discriminator { cfg, params }
    }

    /// Post-sigmoid score, a scalar strictly inside (0, 1).
    pub fn score_var(&self, tape: &mut Tape<S>, tp: &nn::TapeParams, image: Var) -> Var {
        let r = self.cfg.resolution;
        assert_eq!(tape.shape_of(image), &[3, r, r], "discriminator input shape");
        let mut x = image;
        for name in ["d.c0", "d.c1", "d.c2"] {
            let y = nn::conv_layer(tape, tp, name, x, 3, 3);
            let y = tape.leaky_relu(y, 0.2);
            x = tape.avg_pool2(y);
        }
        let shape = tape.shape_of(x).to_vec();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let rows = tape.reshape(x, &[c, h * w]);
        let summed = tape.sum_last(rows);
        let pooled = tape.mul_scalar(summed, 1.0 / (h * w) as f64);
        let pooled = tape.reshape(pooled, &[1, c]);
        let logit = nn::dense_layer(tape, tp, "d.head", pooled);
        let logit = tape.reshape(logit, &[]);
        tape.sigmoid(logit)
    }

    pub fn score(&self, image: &Tensor<S>) -> S {
        let mut tape = Tape::new();
        let tp = self.params.load_const(&mut tape);
        let iv = tape.constant(image.clone());
        let s = self.score_var(&mut tape, &tp, iv);
        tape.val(s).data()[0]
    }
}

pub struct EncoderRun<S> {
    pub encoder: Encoder<S>,
    pub optimizer: Adam<S>,
    pub history: Vec<f64>,
}

/// One encoder update: encode a batch, re-render each image at its own
/// pose, step on the inversion loss. Returns the pre-update batch loss.
#[allow(clippy::too_many_arguments)]
pub fn encoder_step<S: Scalar>(
    gen: &Generator<S>,
    enc: &mut Encoder<S>,
    opt: &mut Adam<S>,
    dataset: &[TrainSample<S>],
    cfg: &TrainConfig,
    weights: &LossWeights,
    perc: &PerceptualExtractor<S>,
    ident: &IdentityEmbedder<S>,
    intr: &Intrinsics<S>,
    sc: &SamplingConfig,
    iter: usize,
) -> f64 {
    let mut rng = iter_rng(cfg.seed, DOMAIN_ENCODER, iter as u64);
    let res = enc.cfg.resolution;
    let mut tape = Tape::new();
    let etp = enc.params.load(&mut tape);
    let gtp = gen.params.load_const(&mut tape);
    let noise = tape.constant(NoiseInput::zeros(gen.cfg.plane_resolution).data);
    let mut terms = Vec::with_capacity(cfg.encoder_batch);
    for _ in 0..cfg.encoder_batch {
        let sample = &dataset[rng.gen_range(0..dataset.len())];
        let img = tape.constant(sample.image.clone());
        let code = enc.encode_var(&mut tape, &etp, img);
        let recon =
            render_image_var(&mut tape, gen, &gtp, code, noise, intr, &sample.pose, res, sc);
        terms.push(inversion_loss_var(&mut tape, recon, img, weights, perc, ident));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    let loss = tape.mul_scalar(acc, 1.0 / terms.len() as f64);
    let grads = tape.backward(loss);
    let gmap = etp.grad_tensors(&tape, &grads);
    opt.step(&mut enc.params, &gmap);
    tape.val(loss).data()[0].as_f64()
}

fn window_mean(h: &[f64], from_start: bool) -> f64 {
    let k = h.len().min(10).max(1);
    let slice = if from_start { &h[..k] } else { &h[h.len() - k..] };
    slice.iter().sum::<f64>() / k as f64
}

/// Train a fresh encoder against a frozen generator.
#[allow(clippy::too_many_arguments)]
pub fn train_encoder<S: Scalar>(
    gen: &Generator<S>,
    dataset: &[TrainSample<S>],
    enc_cfg: crate::encoder::EncoderConfig,
    cfg: &TrainConfig,
    weights: &LossWeights,
    perc: &PerceptualExtractor<S>,
    ident: &IdentityEmbedder<S>,
    intr: &Intrinsics<S>,
    sc: &SamplingConfig,
) -> Result<EncoderRun<S>> {
    cfg.validate();
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let r = enc_cfg.resolution;
    for s in dataset {
        if s.image.shape() != [3, r, r] {
            return Err(Error::InvalidArgument(format!(
                "dataset image {:?} does not match encoder resolution {}",
                s.image.shape(),
                r
            )));
        }
    }
    let mut enc = Encoder::new(enc_cfg, cfg.seed ^ 0xE0C0DE);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr_encoder));
    let mut history = Vec::with_capacity(cfg.encoder_iterations);
    for iter in 0..cfg.encoder_iterations {
        let l = encoder_step(
            gen, &mut enc, &mut opt, dataset, cfg, weights, perc, ident, intr, sc, iter,
        );
        history.push(l);
        if let Some(ratio) = cfg.stop_ratio {
            if history.len() >= 10 && window_mean(&history, false) <= ratio * window_mean(&history, true)
            {
                break;
            }
        }
    }
    Ok(EncoderRun { encoder: enc, optimizer: opt, history })
}

/// Inpainting inputs prepared outside the tape. The frozen encoder and
/// generator produce them, so they are constants for the update.
pub struct PreparedSample<S> {
    pub role: InpaintRole,
    pub initial: Tensor<S>,
    pub mirror: Tensor<S>,
    /// Latent rows driving the modulation.
    pub code: Tensor<S>,
    pub rec_target: Option<Tensor<S>>,
    pub consistency_ref: Tensor<S>,
}

/// Value-level products of one real-data preparation.
pub struct RealStepInputs<S> {
    pub code: LatentCode<S>,
    /// Warp of the input to the novel view, holes filled with the latent
    /// reconstruction there.
    pub initial_novel: Tensor<S>,
    pub mirror_novel: Tensor<S>,
    /// The raw novel-view warp re-warped back to the input view, holes
    /// filled with the latent reconstruction at the input view.
    pub initial_rewarp: Tensor<S>,
    pub mirror_rewarp: Tensor<S>,
    /// Hole mask of the forward warp (1 = hole).
    pub novel_mask: Tensor<S>,
    /// Hole mask of the reverse warp.
    pub rewarp_mask: Tensor<S>,
    /// Latent reconstructions at the input and novel views.
    pub recon_input: Tensor<S>,
    pub recon_novel: Tensor<S>,
}

/// Run the frozen inversion + warp machinery for one real image, with the
/// inversion code supplied by the caller.
#[allow(clippy::too_many_arguments)]
pub fn prepare_real_step_with_code<S: Scalar>(
    gen: &Generator<S>,
    code: LatentCode<S>,
    image: &Tensor<S>,
    pose: &Pose<S>,
    novel_pose: &Pose<S>,
    intr: &Intrinsics<S>,
    sc: &SamplingConfig,
    wcfg: &WarpConfig,
) -> Result<RealStepInputs<S>> {
    if image.rank() != 3 || image.shape()[0] != 3 || image.shape()[1] != image.shape()[2] {
        return Err(Error::InvalidArgument(format!(
            "expected a square (3, r, r) image, got {:?}",
            image.shape()
        )));
    }
    let res = image.shape()[2];
    let noise = NoiseInput::zeros(gen.cfg.plane_resolution);
    let rv_in = gen.render_view(&code, &noise, intr, pose, res, sc);
    let rv_nv = gen.render_view(&code, &noise, intr, novel_pose, res, sc);

    let rel = relative_pose(pose, novel_pose);
    let fwd = forward_warp(image, &rv_in.depth, &rel, intr, wcfg)?;
    let initial_novel = initial_fill(&fwd, &rv_nv.color);

    let (mimg, mdepth, mpose) = mirror_inputs(image, &rv_in.depth, pose);
    let mrel = relative_pose(&mpose, novel_pose);
    let mwarp = forward_warp(&mimg, &mdepth, &mrel, intr, wcfg)?;
    let mirror_novel = initial_fill(&mwarp, &rv_nv.color);

    // Reverse pass: send the raw warped image back with the splatted depth
    // (holes take the rendered novel depth, and are skipped as sources).
    let back_depth = depth_with_fallback(&fwd, &rv_nv.depth);
    let rel_back = relative_pose(novel_pose, pose);
    let back =
        forward_warp_with_skip(&fwd.image, &back_depth, &rel_back, intr, wcfg, fwd.mask.data())?;
    let initial_rewarp = initial_fill(&back, &rv_in.color);

    let mrel_back = relative_pose(&mpose, pose);
    let mback = forward_warp(&mimg, &mdepth, &mrel_back, intr, wcfg)?;
    let mirror_rewarp = initial_fill(&mback, &rv_in.color);

    Ok(RealStepInputs {
        code,
        initial_novel,
        mirror_novel,
        initial_rewarp,
        mirror_rewarp,
        novel_mask: fwd.mask.data().clone(),
        rewarp_mask: back.mask.data().clone(),
        recon_input: rv_in.color,
        recon_novel: rv_nv.color,
    })
}

/// Invert with the frozen encoder, then prepare the real-data inputs.
#[allow(clippy::too_many_arguments)]
pub fn prepare_real_step<S: Scalar>(
    gen: &Generator<S>,
    enc: &Encoder<S>,
    image: &Tensor<S>,
    pose: &Pose<S>,
    novel_pose: &Pose<S>,
    intr: &Intrinsics<S>,
    sc: &SamplingConfig,
    wcfg: &WarpConfig,
) -> Result<RealStepInputs<S>> {
    let code = enc.encode(image)?;
    prepare_real_step_with_code(gen, code, image, pose, novel_pose, intr, sc, wcfg)
}

/// Value-level products of one synthetic-pair preparation.
pub struct SynthStepInputs<S> {
    pub code: LatentCode<S>,
    pub initial: Tensor<S>,
    pub mirror: Tensor<S>,
    /// Ground-truth render at the target view.
    pub target: Tensor<S>,
    /// Render at the source view (for the discriminator's real side).
    pub source: Tensor<S>,
    pub mask: Tensor<S>,
}

/// Render a synthetic pair and warp the source view onto the target camera.
pub fn prepare_synth_step<S: Scalar>(
    gen: &Generator<S>,
    rng: &mut ChaCha8Rng,
    cfg: &TrainConfig,
    intr: &Intrinsics<S>,
    resolution: usize,
    sc: &SamplingConfig,
    wcfg: &WarpConfig,
) -> Result<SynthStepInputs<S>> {
    let src_pose: Pose<S> = sample_novel_pose(rng, cfg, gen.cfg.orbit_radius);
    let dst_pose: Pose<S> = sample_novel_pose(rng, cfg, gen.cfg.orbit_radius);
    let pair = gen.sample_synthetic_pair(rng, intr, &src_pose, &dst_pose, resolution, sc);
    let rel = relative_pose(&src_pose, &dst_pose);
    let fwd = forward_warp(&pair.src.color, &pair.src.depth, &rel, intr, wcfg)?;
    let initial = initial_fill(&fwd, &pair.dst.color);
    let (mimg, mdepth, mpose) = mirror_inputs(&pair.src.color, &pair.src.depth, &src_pose);
    let mrel = relative_pose(&mpose, &dst_pose);
    let mwarp = forward_warp(&mimg, &mdepth, &mrel, intr, wcfg)?;
    let mirror = initial_fill(&mwarp, &pair.dst.color);
    Ok(SynthStepInputs {
        code: pair.latent,
        initial,
        mirror,
        target: pair.dst.color,
        source: pair.src.color,
        mask: fwd.mask.data().clone(),
    })
}

/// Per-iteration loss readout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub kind: StepKind,
    pub total: f64,
    pub rec: f64,
    pub consistency: f64,
    pub adv: f64,
    pub d_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Real,
    Synth,
}

/// One generator-side update over prepared samples. Returns the loss parts
/// and the inpainted images for the discriminator's fake side.
#[allow(clippy::too_many_arguments)]
pub fn inpaint_update<S: Scalar>(
    net: &mut InpaintNet<S>,
    d: &Discriminator<S>,
    enc: &Encoder<S>,
    opt: &mut Adam<S>,
    batch: &[PreparedSample<S>],
    weights: &LossWeights,
    perc: &PerceptualExtractor<S>,
    ident: &IdentityEmbedder<S>,
    use_consistency: bool,
) -> Result<(f64, f64, f64, f64, Vec<Tensor<S>>)> {
    let mut tape = Tape::new();
    let tp = net.params.load(&mut tape);
    let dtp = d.params.load_const(&mut tape);
    let mut samples = Vec::with_capacity(batch.len());
    for ps in batch {
        let iv = tape.constant(ps.initial.clone());
        let mv = tape.constant(ps.mirror.clone());
        let cv = tape.constant(ps.code.clone());
        let img = net.inpaint_vars(&mut tape, &tp, iv, mv, cv);
        let score = d.score_var(&mut tape, &dtp, img);
        let rec_target = ps.rec_target.as_ref().map(|t| tape.constant(t.clone()));
        let consistency_ref = tape.constant(ps.consistency_ref.clone());
        samples.push(InpaintedSample {
            role: ps.role,
            image: img,
            rec_target,
            consistency_ref,
            d_score: score,
        });
    }
    let weights_eff = if use_consistency {
        *weights
    } else {
        LossWeights { total_consistency: 0.0, ..*weights }
    };
    let lv = inpaint_total_loss_var(&mut tape, &samples, &weights_eff, perc, ident, enc)?;
    let grads = tape.backward(lv.total);
    let gmap = tp.grad_tensors(&tape, &grads);
    opt.step(&mut net.params, &gmap);
    let fakes = samples
        .iter()
        .map(|s| (*tape.val_rc(s.image)).clone())
        .collect();
    Ok((
        tape.val(lv.total).data()[0].as_f64(),
        tape.val(lv.rec).data()[0].as_f64(),
        tape.val(lv.consistency).data()[0].as_f64(),
        tape.val(lv.adv).data()[0].as_f64(),
        fakes,
    ))
}

/// One discriminator update. Real images carry the gradient penalty: the
/// input-gradient graph from a first reverse pass feeds the norm term, and
/// the optimizer step differentiates through it (second order).
pub fn discriminator_step<S: Scalar>(
    d: &mut Discriminator<S>,
    opt: &mut Adam<S>,
    reals: &[Tensor<S>],
    fakes: &[Tensor<S>],
    weights: &LossWeights,
) -> f64 {
    assert!(!reals.is_empty() && !fakes.is_empty(), "discriminator needs both sides");
    let mut tape = Tape::new();
    let tp = d.params.load(&mut tape);
    let mut real_scores = Vec::with_capacity(reals.len());
    let mut norms = Vec::with_capacity(reals.len());
    for r in reals {
        let xv = tape.input(r.clone());
        let s = d.score_var(&mut tape, &tp, xv);
        let g = tape.backward(s);
        let gx = g.expect(xv);
        let n = tape.norm_l2(gx, 1e-18);
        norms.push(tape.reshape(n, &[1]));
        real_scores.push(tape.reshape(s, &[1]));
    }
    let mut fake_scores = Vec::with_capacity(fakes.len());
    for f in fakes {
        let xv = tape.constant(f.clone());
        let s = d.score_var(&mut tape, &tp, xv);
        fake_scores.push(tape.reshape(s, &[1]));
    }
    let rs = tape.concat0(&real_scores);
    let fs = tape.concat0(&fake_scores);
    let gn = tape.concat0(&norms);
    let loss = discriminator_adv_loss_var(&mut tape, rs, fs, gn, weights);
    let grads = tape.backward(loss);
    let gmap = tp.grad_tensors(&tape, &grads);
    opt.step(&mut d.params, &gmap);
    tape.val(loss).data()[0].as_f64()
}

pub struct InpaintRun<S> {
    pub net: InpaintNet<S>,
    pub discriminator: Discriminator<S>,
    pub g_opt: Adam<S>,
    pub d_opt: Adam<S>,
    pub history: Vec<StepLosses>,
}

/// One full iteration: prepare inputs (real or synthetic turn), update the
/// inpainting network, then update the discriminator on the step's real and
/// fake images.
#[allow(clippy::too_many_arguments)]
pub fn inpaint_step<S: Scalar>(
    gen: &Generator<S>,
    enc: &Encoder<S>,
    net: &mut InpaintNet<S>,
    d: &mut Discriminator<S>,
    g_opt: &mut Adam<S>,
    d_opt: &mut Adam<S>,
    dataset: &[TrainSample<S>],
    cfg: &TrainConfig,
    weights: &LossWeights,
    perc: &PerceptualExtractor<S>,
    ident: &IdentityEmbedder<S>,
    intr: &Intrinsics<S>,
    sc: &SamplingConfig,
    wcfg: &WarpConfig,
    iter: usize,
) -> Result<StepLosses> {
    let mut rng = iter_rng(cfg.seed, DOMAIN_INPAINT, iter as u64);
    let synth_turn = cfg.use_synth_data && iter % 2 == 1;
    let res = net.cfg.resolution;
    let mut batch = Vec::new();
    let mut reals = Vec::new();
    if synth_turn {
        for _ in 0..cfg.inpaint_batch {
            let inputs = prepare_synth_step(gen, &mut rng, cfg, intr, res, sc, wcfg)?;
            batch.push(PreparedSample {
                role: InpaintRole::Synth,
                initial: inputs.initial,
                mirror: inputs.mirror,
                code: inputs.code.data.clone(),
                rec_target: Some(inputs.target.clone()),
                consistency_ref: inputs.target.clone(),
            });
            reals.push(inputs.target);
        }
    } else {
        for _ in 0..cfg.inpaint_batch {
            let sample = &dataset[rng.gen_range(0..dataset.len())];
            let novel_pose: Pose<S> = sample_novel_pose(&mut rng, cfg, gen.cfg.orbit_radius);
            let inputs =
                prepare_real_step(gen, enc, &sample.image, &sample.pose, &novel_pose, intr, sc, wcfg)?;
            batch.push(PreparedSample {
                role: InpaintRole::Novel,
                initial: inputs.initial_novel,
                mirror: inputs.mirror_novel,
                code: inputs.code.data.clone(),
                rec_target: None,
                consistency_ref: sample.image.clone(),
            });
            batch.push(PreparedSample {
                role: InpaintRole::ReWarp,
                initial: inputs.initial_rewarp,
                mirror: inputs.mirror_rewarp,
                code: inputs.code.data.clone(),
                rec_target: Some(sample.image.clone()),
                consistency_ref: sample.image.clone(),
            });
            reals.push(sample.image.clone());
        }
    }
    let (total, rec, consistency, adv, fakes) = inpaint_update(
        net,
        d,
        enc,
        g_opt,
        &batch,
        weights,
        perc,
        ident,
        cfg.use_consistency_loss,
    )?;
    let d_loss = discriminator_step(d, d_opt, &reals, &fakes, weights);
    Ok(StepLosses {
        kind: if synth_turn { StepKind::Synth } else { StepKind::Real },
        total,
        rec,
        consistency,
        adv,
        d_loss,
    })
}

/// Train a fresh inpainting network and discriminator against the frozen
/// generator and encoder. The config's ablation flags override the network
/// config's.
#[allow(clippy::too_many_arguments)]
pub fn train_inpaint<S: Scalar>(
    gen: &Generator<S>,
    enc: &Encoder<S>,
    dataset: &[TrainSample<S>],
    net_cfg: crate::inpaint::InpaintConfig,
    cfg: &TrainConfig,
    weights: &LossWeights,
    perc: &PerceptualExtractor<S>,
    ident: &IdentityEmbedder<S>,
    intr: &Intrinsics<S>,
    sc: &SamplingConfig,
    wcfg: &WarpConfig,
) -> Result<InpaintRun<S>> {
    cfg.validate();
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let mut net_cfg = net_cfg;
    net_cfg.use_modulation = cfg.use_modulation;
    net_cfg.use_symmetry = cfg.use_symmetry;
    let res = net_cfg.resolution;
    assert_eq!(res, enc.cfg.resolution, "inpainting and encoder resolutions differ");
    for s in dataset {
        assert_eq!(s.image.shape(), &[3, res, res], "dataset resolution mismatch");
    }
    let mut net = InpaintNet::new(net_cfg, cfg.seed ^ 0x17A1);
    let mut d = Discriminator::new(
        DiscriminatorConfig { resolution: res, base_channels: cfg.d_base_channels },
        cfg.seed ^ 0xD15C,
    );
    let mut g_opt = Adam::new(AdamConfig::with_lr(cfg.lr_inpaint));
    let mut d_opt = Adam::new(AdamConfig::with_lr(cfg.lr_discriminator));
    let mut history: Vec<StepLosses> = Vec::with_capacity(cfg.inpaint_iterations);
    for iter in 0..cfg.inpaint_iterations {
        let losses = inpaint_step(
            gen, enc, &mut net, &mut d, &mut g_opt, &mut d_opt, dataset, cfg, weights, perc,
            ident, intr, sc, wcfg, iter,
        )?;
        history.push(losses);
        if let Some(ratio) = cfg.stop_ratio {
            let totals: Vec<f64> = history.iter().map(|h| h.total).collect();
            if totals.len() >= 10
                && window_mean(&totals, false) <= ratio * window_mean(&totals, true)
            {
                break;
            }
        }
    }
    Ok(InpaintRun { net, discriminator: d, g_opt, d_opt, history })
}

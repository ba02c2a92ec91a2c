//! Training objectives: the inversion loss for the encoder, the
//! reconstruction / consistency / adversarial losses for the inpainting
//! network, and their weighted combinations.
//!
//! Perceptual and identity terms go through pluggable fixed extractors. The
//! defaults are small random-weight convolutional stacks with a frozen seed:
//! random features give a usable perceptual distance at toy scale and keep
//! the pipeline free of pretrained-network files. Drop-in replacements with
//! learned feature stacks fit the same two call signatures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::Encoder;
use crate::nn::{self, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Every loss weight in one place. The three groups mirror the three
/// objectives: the inversion triple, the reconstruction triple, and the
/// total-loss mix, plus the discriminator gradient penalty.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    /// Inversion loss: pixel MSE, perceptual, identity.
    pub inv_mse: f64,
    pub inv_perc: f64,
    pub inv_id: f64,
    /// Reconstruction loss: pixel MAE, perceptual, identity.
    pub rec_mae: f64,
    pub rec_perc: f64,
    pub rec_id: f64,
    /// Total inpainting objective: reconstruction, latent consistency,
    /// adversarial.
    pub total_rec: f64,
    pub total_consistency: f64,
    pub total_adv: f64,
    /// Discriminator gradient penalty strength.
    pub gamma: f64,
    /// Off: penalize the raw gradient norm (the form used here). On: the
    /// conventional gamma/2 * E[||grad||^2] penalty.
    pub squared_r1: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            inv_mse: 1.0,
            inv_perc: 0.8,
            inv_id: 0.1,
            rec_mae: 10.0,
            rec_perc: 30.0,
            rec_id: 0.1,
            total_rec: 1.0,
            total_consistency: 0.1,
            total_adv: 10.0,
            gamma: 10.0,
            squared_r1: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) {
        for (name, v) in [
            ("inv_mse", self.inv_mse),
            ("inv_perc", self.inv_perc),
            ("inv_id", self.inv_id),
            ("rec_mae", self.rec_mae),
            ("rec_perc", self.rec_perc),
            ("rec_id", self.rec_id),
            ("total_rec", self.total_rec),
            ("total_consistency", self.total_consistency),
            ("total_adv", self.total_adv),
            ("gamma", self.gamma),
        ] {
            assert!(v >= 0.0, "loss weight {} must be nonnegative, got {}", name, v);
        }
    }
}

/// Fixed multi-scale convolutional feature stack. Weights are drawn once
/// from the seed and never trained; distances are feature-space MSEs
/// averaged over scales.
pub struct PerceptualExtractor<S> {
    params: ParamSet<S>,
}

impl<S: Scalar> PerceptualExtractor<S> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        nn::add_conv(&mut params, &mut rng, "p.c0", 3, 8, 3, 3);
        nn::add_conv(&mut params, &mut rng, "p.c1", 8, 16, 3, 3);
        nn::add_conv(&mut params, &mut rng, "p.c2", 16, 16, 3, 3);
        PerceptualExtractor { params }
    }

    /// Three feature maps at full, half, and quarter resolution. Inputs must
    /// be (3, h, w) with h, w divisible by 4.
    pub fn features_var(&self, tape: &mut Tape<S>, image: Var) -> Vec<Var> {
        let tp = self.params.load_const(tape);
        let f0 = nn::conv_layer(tape, &tp, "p.c0", image, 3, 3);
        let f0 = tape.leaky_relu(f0, 0.2);
        let p0 = tape.avg_pool2(f0);
        let f1 = nn::conv_layer(tape, &tp, "p.c1", p0, 3, 3);
        let f1 = tape.leaky_relu(f1, 0.2);
        let p1 = tape.avg_pool2(f1);
        let f2 = nn::conv_layer(tape, &tp, "p.c2", p1, 3, 3);
        let f2 = tape.leaky_relu(f2, 0.2);
        vec![f0, f1, f2]
    }

    /// Mean over scales of feature-space MSE.
    pub fn distance_var(&self, tape: &mut Tape<S>, a: Var, b: Var) -> Var {
        let fa = self.features_var(tape, a);
        let fb = self.features_var(tape, b);
        let terms: Vec<Var> = fa
            .iter()
            .zip(fb.iter())
            .map(|(&x, &y)| tape.mse(x, y))
            .collect();
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t);
        }
        tape.mul_scalar(acc, 1.0 / terms.len() as f64)
    }

    pub fn distance(&self, a: &Tensor<S>, b: &Tensor<S>) -> S {
        assert_eq!(a.shape(), b.shape(), "perceptual distance needs equal shapes");
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let bv = tape.constant(b.clone());
        let d = self.distance_var(&mut tape, av, bv);
        tape.val(d).data()[0]
    }
}

/// Fixed map from images to unit-norm embeddings. A constant component is
/// appended before normalization so the norm is exactly 1 for every input,
/// including all-zero images.
pub struct IdentityEmbedder<S> {
    params: ParamSet<S>,
    dim: usize,
}

impl<S: Scalar> IdentityEmbedder<S> {
    pub fn new(seed: u64) -> Self {
        let dim = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        nn::add_conv(&mut params, &mut rng, "id.c0", 3, 8, 3, 3);
        nn::add_conv(&mut params, &mut rng, "id.c1", 8, 16, 3, 3);
        nn::add_dense(&mut params, &mut rng, "id.head", 16, dim - 1);
        IdentityEmbedder { params, dim }
    }

    pub fn embed_var(&self, tape: &mut Tape<S>, image: Var) -> Var {
        let tp = self.params.load_const(tape);
        let f0 = nn::conv_layer(tape, &tp, "id.c0", image, 3, 3);
        let f0 = tape.leaky_relu(f0, 0.2);
        let p0 = tape.avg_pool2(f0);
        let f1 = nn::conv_layer(tape, &tp, "id.c1", p0, 3, 3);
        let f1 = tape.leaky_relu(f1, 0.2);
        let p1 = tape.avg_pool2(f1);
        // Global average pool to (1, channels), then project.
        let shape = tape.shape_of(p1).to_vec();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let rows = tape.reshape(p1, &[c, h * w]);
        let summed = tape.sum_last(rows);
        let pooled = tape.mul_scalar(summed, 1.0 / (h * w) as f64);
        let pooled = tape.reshape(pooled, &[1, c]);
        let proj = nn::dense_layer(tape, &tp, "id.head", pooled);
        let proj = tape.reshape(proj, &[self.dim - 1]);
        let anchor = tape.constant(Tensor::ones(&[1]));
        let v = tape.concat0(&[proj, anchor]);
        let n = tape.norm_l2(v, 0.0);
        let nfull = tape.fill(n, &[self.dim]);
        tape.div(v, nfull)
    }

    pub fn embed(&self, image: &Tensor<S>) -> Tensor<S> {
        let mut tape = Tape::new();
        let iv = tape.constant(image.clone());
        let e = self.embed_var(&mut tape, iv);
        (*tape.val_rc(e)).clone()
    }

    /// Cosine similarity of two embeddings (a plain dot product, both sides
    /// being unit-norm).
    pub fn cosine_var(&self, tape: &mut Tape<S>, a: Var, b: Var) -> Var {
        let ea = self.embed_var(tape, a);
        let eb = self.embed_var(tape, b);
        tape.dot_all(ea, eb)
    }
}

/// Inversion objective: weighted pixel MSE, perceptual distance, and
/// identity mismatch (1 - cosine). Zero-weight terms are skipped entirely,
/// so pixel-only configurations work on images too small for the extractor
/// stacks.
pub fn inversion_loss_var<S: Scalar>(
    tape: &mut Tape<S>,
    recon: Var,
    target: Var,
    w: &LossWeights,
    perc: &PerceptualExtractor<S>,
    ident: &IdentityEmbedder<S>,
) -> Var {
    assert_eq!(tape.shape_of(recon), tape.shape_of(target), "loss input shapes");
    let mse = tape.mse(recon, target);
    let mut total = tape.mul_scalar(mse, w.inv_mse);
    if w.inv_perc != 0.0 {
        let d = perc.distance_var(tape, recon, target);
        let term = tape.mul_scalar(d, w.inv_perc);
        total = tape.add(total, term);
    }
    if w.inv_id != 0.0 {
        let cos = ident.cosine_var(tape, recon, target);
        let ncos = tape.neg(cos);
        let mismatch = tape.add_scalar(ncos, 1.0);
        let term = tape.mul_scalar(mismatch, w.inv_id);
        total = tape.add(total, term);
    }
    total
}

pub fn inversion_loss<S: Scalar>(
    recon: &Tensor<S>,
    target: &Tensor<S>,
    w: &LossWeights,
    perc: &PerceptualExtractor<S>,
    ident: &IdentityEmbedder<S>,
) -> S {
    assert_eq!(recon.shape(), target.shape(), "loss input shapes");
    let mut tape = Tape::new();
    let rv = tape.constant(recon.clone());
    let tv = tape.constant(target.clone());
    let l = inversion_loss_var(&mut tape, rv, tv, w, perc, ident);
    tape.val(l).data()[0]
}

/// Reconstruction objective: weighted pixel MAE, perceptual distance, and
/// identity mismatch.
pub fn reconstruction_loss_var<S: Scalar>(
    tape: &mut Tape<S>,
    recon: Var,
    target: Var,
    w: &LossWeights,
    perc: &PerceptualExtractor<S>,
    ident: &IdentityEmbedder<S>,
) -> Var {
    assert_eq!(tape.shape_of(recon), tape.shape_of(target), "loss input shapes");
    let mae = tape.mae(recon, target);
    let mut total = tape.mul_scalar(mae, w.rec_mae);
    if w.rec_perc != 0.0 {
        let d = perc.distance_var(tape, recon, target);
        let term = tape.mul_scalar(d, w.rec_perc);
        total = tape.add(total, term);
    }
    if w.rec_id != 0.0 {
        let cos = ident.cosine_var(tape, recon, target);
        let ncos = tape.neg(cos);
        let mismatch = tape.add_scalar(ncos, 1.0);
        let term = tape.mul_scalar(mismatch, w.rec_id);
        total = tape.add(total, term);
    }
    total
}

pub fn reconstruction_loss<S: Scalar>(
    recon: &Tensor<S>,
    target: &Tensor<S>,
    w: &LossWeights,
    perc: &PerceptualExtractor<S>,
    ident: &IdentityEmbedder<S>,
) -> S {
    assert_eq!(recon.shape(), target.shape(), "loss input shapes");
    let mut tape = Tape::new();
    let rv = tape.constant(recon.clone());
    let tv = tape.constant(target.clone());
    let l = reconstruction_loss_var(&mut tape, rv, tv, w, perc, ident);
    tape.val(l).data()[0]
}

/// Squared l2 distance between two latent codes, normalized by code size so
/// its weight is architecture-independent.
pub fn code_mse_var<S: Scalar>(tape: &mut Tape<S>, a: Var, b: Var) -> Var {
    assert_eq!(tape.shape_of(a), tape.shape_of(b), "code shapes");
    let n = tape.val(a).len();
    let d = tape.sub(a, b);
    let ss = tape.sum_squares(d);
    tape.mul_scalar(ss, 1.0 / n as f64)
}

/// Latent consistency: encode both images with the frozen encoder and take
/// the size-normalized squared distance of the codes.
pub fn consistency_loss_var<S: Scalar>(
    tape: &mut Tape<S>,
    enc: &Encoder<S>,
    a: Var,
    b: Var,
) -> Var {
    let tp = enc.params.load_const(tape);
    let ca = enc.encode_var(tape, &tp, a);
    let cb = enc.encode_var(tape, &tp, b);
    code_mse_var(tape, ca, cb)
}

pub fn consistency_loss<S: Scalar>(enc: &Encoder<S>, a: &Tensor<S>, b: &Tensor<S>) -> S {
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let bv = tape.constant(b.clone());
    let l = consistency_loss_var(&mut tape, enc, av, bv);
    tape.val(l).data()[0]
}

fn check_scores<S: Scalar>(what: &str, scores: &Tensor<S>) -> Result<()> {
    for &s in scores.data() {
        let v = s.as_f64();
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "{} scores must be probabilities strictly inside (0,1), got {}",
                what, v
            )));
        }
    }
    Ok(())
}

/// Generator-side adversarial loss on post-sigmoid scores: -E[log D].
pub fn generator_adv_loss_var<S: Scalar>(tape: &mut Tape<S>, scores_fake: Var) -> Var {
    let ln = tape.ln(scores_fake);
    let m = tape.mean_all(ln);
    tape.neg(m)
}

pub fn generator_adv_loss<S: Scalar>(scores_fake: &Tensor<S>) -> Result<S> {
    check_scores("fake", scores_fake)?;
    let mut tape = Tape::new();
    let sv = tape.constant(scores_fake.clone());
    let l = generator_adv_loss_var(&mut tape, sv);
    Ok(tape.val(l).data()[0])
}

/// Discriminator loss: -E[log D(real)] - E[log(1 - D(fake))] plus a
/// gradient penalty on the real scores. The penalty uses the raw norm by
/// default; `squared_r1` switches to the conventional gamma/2 * norm^2.
pub fn discriminator_adv_loss_var<S: Scalar>(
    tape: &mut Tape<S>,
    scores_real: Var,
    scores_fake: Var,
    grad_norms_real: Var,
    w: &LossWeights,
) -> Var {
    let ln_r = tape.ln(scores_real);
    let mr = tape.mean_all(ln_r);
    let real_term = tape.neg(mr);
    let nf = tape.neg(scores_fake);
    let one_minus = tape.add_scalar(nf, 1.0);
    let ln_f = tape.ln(one_minus);
    let mf = tape.mean_all(ln_f);
    let fake_term = tape.neg(mf);
    let mut total = tape.add(real_term, fake_term);
    if w.gamma != 0.0 {
        let penalty = if w.squared_r1 {
            let sq = tape.mul(grad_norms_real, grad_norms_real);
            let m = tape.mean_all(sq);
            tape.mul_scalar(m, w.gamma / 2.0)
        } else {
            let m = tape.mean_all(grad_norms_real);
            tape.mul_scalar(m, w.gamma)
        };
        total = tape.add(total, penalty);
    }
    total
}

pub fn discriminator_adv_loss<S: Scalar>(
    scores_real: &Tensor<S>,
    scores_fake: &Tensor<S>,
    grad_norms_real: &Tensor<S>,
    w: &LossWeights,
) -> Result<S> {
    check_scores("real", scores_real)?;
    check_scores("fake", scores_fake)?;
    let mut tape = Tape::new();
    let rv = tape.constant(scores_real.clone());
    let fv = tape.constant(scores_fake.clone());
    let gv = tape.constant(grad_norms_real.clone());
    let l = discriminator_adv_loss_var(&mut tape, rv, fv, gv, w);
    Ok(tape.val(l).data()[0])
}

/// Where an inpainted image came from, which decides the loss terms it
/// participates in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InpaintRole {
    /// Warped to a novel view: no ground truth, consistency and adversarial
    /// terms only.
    Novel,
    /// Warped out and back to the input view: reconstructed against the
    /// input image.
    ReWarp,
    /// Generated pair: reconstructed against the rendered target view.
    Synth,
}

/// One inpainted image with its references and discriminator score.
pub struct InpaintedSample {
    pub role: InpaintRole,
    pub image: Var,
    /// Pixel-space reconstruction target; must be absent for Novel (no
    /// ground truth exists there) and present otherwise.
    pub rec_target: Option<Var>,
    /// Image whose latent code this sample should agree with.
    pub consistency_ref: Var,
    /// Post-sigmoid discriminator score for this image.
    pub d_score: Var,
}

pub struct InpaintLossVars {
    pub rec: Var,
    pub consistency: Var,
    pub adv: Var,
    pub total: Var,
}

/// Weighted mix of the three component losses.
pub fn combine_inpaint_losses(w: &LossWeights, rec: f64, consistency: f64, adv: f64) -> f64 {
    w.total_rec * rec + w.total_consistency * consistency + w.total_adv * adv
}

fn combine_inpaint_losses_var<S: Scalar>(
    tape: &mut Tape<S>,
    w: &LossWeights,
    rec: Var,
    consistency: Var,
    adv: Var,
) -> Var {
    let r = tape.mul_scalar(rec, w.total_rec);
    let c = tape.mul_scalar(consistency, w.total_consistency);
    let a = tape.mul_scalar(adv, w.total_adv);
    let rc = tape.add(r, c);
    tape.add(rc, a)
}

/// Full inpainting objective over a batch of role-tagged samples.
/// Reconstruction averages over the samples that have ground truth,
/// consistency and the adversarial term run over every sample.
pub fn inpaint_total_loss_var<S: Scalar>(
    tape: &mut Tape<S>,
    samples: &[InpaintedSample],
    w: &LossWeights,
    perc: &PerceptualExtractor<S>,
    ident: &IdentityEmbedder<S>,
    enc: &Encoder<S>,
) -> Result<InpaintLossVars> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty loss batch".into()));
    }
    for s in samples {
        match (s.role, s.rec_target.is_some()) {
            (InpaintRole::Novel, true) => {
                return Err(Error::InvalidArgument(
                    "novel-view samples have no ground truth and take no reconstruction target"
                        .into(),
                ));
            }
            (InpaintRole::ReWarp, false) | (InpaintRole::Synth, false) => {
                return Err(Error::InvalidArgument(
                    "reconstruction samples need a target image".into(),
                ));
            }
            _ => {}
        }
    }
    let rec_terms: Vec<Var> = samples
        .iter()
        .filter_map(|s| s.rec_target.map(|t| (s.image, t)))
        .map(|(img, t)| reconstruction_loss_var(tape, img, t, w, perc, ident))
        .collect();
    let rec = mean_of(tape, &rec_terms);
    // A zero consistency weight (the ablation toggle) removes the encoder
    // from the graph instead of multiplying it away.
    let consistency = if w.total_consistency == 0.0 {
        tape.constant(Tensor::zeros(&[]))
    } else {
        let cons_terms: Vec<Var> = samples
            .iter()
            .map(|s| consistency_loss_var(tape, enc, s.image, s.consistency_ref))
            .collect();
        mean_of(tape, &cons_terms)
    };
    let scores: Vec<Var> = samples
        .iter()
        .map(|s| tape.reshape(s.d_score, &[1]))
        .collect();
    let all_scores = tape.concat0(&scores);
    let adv = generator_adv_loss_var(tape, all_scores);
    let total = combine_inpaint_losses_var(tape, w, rec, consistency, adv);
    Ok(InpaintLossVars { rec, consistency, adv, total })
}

fn mean_of<S: Scalar>(tape: &mut Tape<S>, terms: &[Var]) -> Var {
    if terms.is_empty() {
        return tape.constant(Tensor::zeros(&[]));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    tape.mul_scalar(acc, 1.0 / terms.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::tensor::check::{grad_check, GradCheckCfg};
    use rand::Rng;

    fn rand_img(rng: &mut ChaCha8Rng, r: usize) -> Tensor<f64> {
        Tensor::from_fn(&[3, r, r], |_| rng.gen_range(-1.0..1.0))
    }

    fn tiny_encoder() -> Encoder<f64> {
        Encoder::new(
            EncoderConfig { resolution: 8, latent_layers: 4, latent_dim: 8, base_channels: 4 },
            77,
        )
    }

    #[test]
    fn default_weights_match_published_settings() {
        let w = LossWeights::default();
        assert_eq!((w.inv_mse, w.inv_perc, w.inv_id), (1.0, 0.8, 0.1));
        assert_eq!((w.rec_mae, w.rec_perc, w.rec_id), (10.0, 30.0, 0.1));
        assert_eq!((w.total_rec, w.total_consistency, w.total_adv), (1.0, 0.1, 10.0));
        assert_eq!(w.gamma, 10.0);
        assert!(!w.squared_r1);
        w.validate();
    }

    #[test]
    fn identity_embeddings_are_unit_norm() {
        let ident: IdentityEmbedder<f64> = IdentityEmbedder::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for img in [rand_img(&mut rng, 8), rand_img(&mut rng, 16), Tensor::zeros(&[3, 8, 8])] {
            let e = ident.embed(&img);
            let n: f64 = e.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6, "norm {}", n);
        }
    }

    #[test]
    fn inversion_loss_vanishes_iff_images_match() {
        let perc = PerceptualExtractor::new(2);
        let ident = IdentityEmbedder::new(3);
        let w = LossWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_img(&mut rng, 8);
        let b = rand_img(&mut rng, 8);
        let zero = inversion_loss(&a, &a, &w, &perc, &ident);
        assert!(zero.abs() < 1e-9, "equal images gave {}", zero);
        assert!(inversion_loss(&a, &b, &w, &perc, &ident) > 0.0);
        // Positive pixel weight forces positivity for any difference.
        let c = a.map(|v| v + 1e-3);
        assert!(inversion_loss(&a, &c, &w, &perc, &ident) > 0.0);
    }

    #[test]
    fn inversion_loss_hand_case_pixel_only() {
        // Constant 0.5 difference with only the MSE term active: 0.25.
        let perc = PerceptualExtractor::new(2);
        let ident = IdentityEmbedder::new(3);
        let w = LossWeights { inv_perc: 0.0, inv_id: 0.0, ..LossWeights::default() };
        let a: Tensor<f64> = Tensor::zeros(&[3, 2, 2]);
        let b = Tensor::full(&[3, 2, 2], 0.5);
        let l = inversion_loss(&a, &b, &w, &perc, &ident);
        assert!((l - 0.25).abs() < 1e-12, "got {}", l);
    }

    #[test]
    fn reconstruction_loss_hand_case_pixel_only() {
        // Constant 0.1 difference, MAE weight 10: exactly 1.
        let perc = PerceptualExtractor::new(2);
        let ident = IdentityEmbedder::new(3);
        let w = LossWeights { rec_perc: 0.0, rec_id: 0.0, ..LossWeights::default() };
        let a: Tensor<f64> = Tensor::zeros(&[3, 2, 2]);
        let b = Tensor::full(&[3, 2, 2], 0.1);
        let l = reconstruction_loss(&a, &b, &w, &perc, &ident);
        assert!((l - 1.0).abs() < 1e-9, "got {}", l);
        // Full weights need extractor-sized images.
        let big: Tensor<f64> = Tensor::full(&[3, 8, 8], 0.3);
        let z = reconstruction_loss(&big, &big, &LossWeights::default(), &perc, &ident);
        assert!(z.abs() < 1e-9);
    }

    #[test]
    fn code_distance_normalizes_by_size() {
        // Codes differing by 1 in a single coordinate over 512 entries.
        let a: Tensor<f64> = Tensor::zeros(&[8, 64]);
        let mut bd = vec![0.0; 512];
        bd[137] = 1.0;
        let b = Tensor::new(vec![8, 64], bd);
        let mut tape = Tape::new();
        let av = tape.constant(a);
        let bv = tape.constant(b);
        let l = code_mse_var(&mut tape, av, bv);
        let got = tape.val(l).data()[0];
        assert!((got - 1.0 / 512.0).abs() < 1e-15, "got {}", got);
    }

    #[test]
    fn consistency_loss_is_symmetric_and_zero_on_equal() {
        let enc = tiny_encoder();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_img(&mut rng, 8);
        let b = rand_img(&mut rng, 8);
        assert_eq!(consistency_loss(&enc, &a, &a), 0.0);
        let ab = consistency_loss(&enc, &a, &b);
        let ba = consistency_loss(&enc, &b, &a);
        assert!(ab > 0.0);
        assert_eq!(ab, ba, "metric symmetry should be bitwise here");
    }

    #[test]
    fn generator_adv_loss_hand_cases() {
        let half: Tensor<f64> = Tensor::full(&[4], 0.5);
        let l = generator_adv_loss(&half).unwrap();
        assert!((l - 0.6931).abs() < 1e-4, "got {}", l);
        for bad in [0.0, 1.0, -0.2, 1.3] {
            let t = Tensor::full(&[2], bad);
            assert!(matches!(generator_adv_loss(&t), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn discriminator_adv_loss_hand_cases() {
        let w = LossWeights::default();
        // Near-optimal discriminator with the penalty off: loss tends to 0.
        let delta = 1e-9;
        let real: Tensor<f64> = Tensor::full(&[2], 1.0 - delta);
        let fake = Tensor::full(&[2], delta);
        let gn = Tensor::zeros(&[2]);
        let w0 = LossWeights { gamma: 0.0, ..w };
        let l = discriminator_adv_loss(&real, &fake, &gn, &w0).unwrap();
        assert!(l.abs() < 1e-6, "got {}", l);
        // Uninformative scores plus a 0.3 gradient norm at gamma 10.
        let half: Tensor<f64> = Tensor::full(&[2], 0.5);
        let gn = Tensor::full(&[2], 0.3);
        let l = discriminator_adv_loss(&half, &half, &gn, &w).unwrap();
        assert!((l - 4.3863).abs() < 1e-4, "got {}", l);
        // Squared form halves gamma and squares the norm: 2 ln 2 + 0.45.
        let wsq = LossWeights { squared_r1: true, ..w };
        let l = discriminator_adv_loss(&half, &half, &gn, &wsq).unwrap();
        let want = 2.0 * (2.0f64).ln() + 10.0 / 2.0 * 0.09;
        assert!((l - want).abs() < 1e-9, "got {}", l);
        let bad = Tensor::full(&[2], 1.0);
        assert!(matches!(
            discriminator_adv_loss(&bad, &half, &gn, &w),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn combined_loss_hand_case() {
        let w = LossWeights::default();
        let total = combine_inpaint_losses(&w, 2.0, 1.0, 0.5);
        assert!((total - 7.1).abs() < 1e-12, "got {}", total);
    }

    fn build_batch(
        tape: &mut Tape<f64>,
        rng: &mut ChaCha8Rng,
        novel_img: Tensor<f64>,
    ) -> Vec<InpaintedSample> {
        let input = tape.constant(rand_img(rng, 8));
        let synth_t = tape.constant(rand_img(rng, 8));
        let novel = tape.constant(novel_img);
        let rewarp = tape.constant(rand_img(rng, 8));
        let synth = tape.constant(rand_img(rng, 8));
        let s1 = tape.constant(Tensor::full(&[1], 0.4));
        let s2 = tape.constant(Tensor::full(&[1], 0.5));
        let s3 = tape.constant(Tensor::full(&[1], 0.6));
        vec![
            InpaintedSample {
                role: InpaintRole::Novel,
                image: novel,
                rec_target: None,
                consistency_ref: input,
                d_score: s1,
            },
            InpaintedSample {
                role: InpaintRole::ReWarp,
                image: rewarp,
                rec_target: Some(input),
                consistency_ref: input,
                d_score: s2,
            },
            InpaintedSample {
                role: InpaintRole::Synth,
                image: synth,
                rec_target: Some(synth_t),
                consistency_ref: synth_t,
                d_score: s3,
            },
        ]
    }

    #[test]
    fn total_loss_groups_roles_correctly() {
        let perc = PerceptualExtractor::new(2);
        let ident = IdentityEmbedder::new(3);
        let enc = tiny_encoder();
        let w = LossWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let novel_a = rand_img(&mut rng, 8);
        let novel_b = rand_img(&mut rng, 8);

        let run = |novel: Tensor<f64>| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut tape = Tape::new();
            let samples = build_batch(&mut tape, &mut rng, novel);
            let l = inpaint_total_loss_var(&mut tape, &samples, &w, &perc, &ident, &enc).unwrap();
            (
                tape.val(l.rec).data()[0],
                tape.val(l.consistency).data()[0],
                tape.val(l.adv).data()[0],
                tape.val(l.total).data()[0],
            )
        };
        let (rec_a, cons_a, adv_a, total_a) = run(novel_a.clone());
        let (rec_b, cons_b, adv_b, _) = run(novel_b);
        // The novel view has no ground truth: changing it must leave the
        // reconstruction term untouched while consistency reacts.
        assert_eq!(rec_a, rec_b);
        assert_ne!(cons_a, cons_b);
        assert_eq!(adv_a, adv_b);
        let want = combine_inpaint_losses(&w, rec_a, cons_a, adv_a);
        assert!((total_a - want).abs() < 1e-12);
    }

    #[test]
    fn total_loss_rejects_bad_grouping() {
        let perc = PerceptualExtractor::new(2);
        let ident = IdentityEmbedder::new(3);
        let enc = tiny_encoder();
        let w = LossWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tape = Tape::new();
        let novel = rand_img(&mut rng, 8);
        let mut samples = build_batch(&mut tape, &mut rng, novel);
        // A novel sample with a reconstruction target breaks the grouping.
        let bogus = samples[1].rec_target;
        samples[0].rec_target = bogus;
        assert!(matches!(
            inpaint_total_loss_var(&mut tape, &samples, &w, &perc, &ident, &enc),
            Err(Error::InvalidArgument(_))
        ));
        samples[0].rec_target = None;
        samples[1].rec_target = None;
        assert!(matches!(
            inpaint_total_loss_var(&mut tape, &samples, &w, &perc, &ident, &enc),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            inpaint_total_loss_var::<f64>(&mut tape, &[], &w, &perc, &ident, &enc),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn image_losses_match_finite_differences() {
        let perc = PerceptualExtractor::new(2);
        let ident = IdentityEmbedder::new(3);
        let w = LossWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = rand_img(&mut rng, 8);
        let b = rand_img(&mut rng, 8);
        let gc = GradCheckCfg::default();
        let err = grad_check(
            |tape, vs| inversion_loss_var(tape, vs[0], vs[1], &w, &perc, &ident),
            &[a.clone(), b.clone()],
            &gc,
        );
        assert!(err < 1e-4, "inversion rel err {}", err);
        let err = grad_check(
            |tape, vs| reconstruction_loss_var(tape, vs[0], vs[1], &w, &perc, &ident),
            &[a.clone(), b.clone()],
            &gc,
        );
        assert!(err < 1e-4, "reconstruction rel err {}", err);
        let enc = tiny_encoder();
        let err = grad_check(
            |tape, vs| consistency_loss_var(tape, &enc, vs[0], vs[1]),
            &[a, b],
            &gc,
        );
        assert!(err < 1e-4, "consistency rel err {}", err);
    }

    #[test]
    fn adversarial_losses_match_finite_differences() {
        let w = LossWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let real = Tensor::from_fn(&[5], |_| rng.gen_range(0.15..0.85));
        let fake = Tensor::from_fn(&[5], |_| rng.gen_range(0.15..0.85));
        let gn = Tensor::from_fn(&[5], |_| rng.gen_range(0.1..0.9));
        let gc = GradCheckCfg::default();
        let err = grad_check(|tape, vs| generator_adv_loss_var(tape, vs[0]), &[fake.clone()], &gc);
        assert!(err < 1e-4, "generator adv rel err {}", err);
        let err = grad_check(
            |tape, vs| discriminator_adv_loss_var(tape, vs[0], vs[1], vs[2], &w),
            &[real.clone(), fake.clone(), gn.clone()],
            &gc,
        );
        assert!(err < 1e-4, "discriminator adv rel err {}", err);
        let wsq = LossWeights { squared_r1: true, ..w };
        let err = grad_check(
            |tape, vs| discriminator_adv_loss_var(tape, vs[0], vs[1], vs[2], &wsq),
            &[real, fake, gn],
            &gc,
        );
        assert!(err < 1e-4, "squared-penalty rel err {}", err);
    }

    #[test]
    fn total_loss_matches_finite_differences() {
        let perc = PerceptualExtractor::new(2);
        let ident = IdentityEmbedder::new(3);
        let enc = tiny_encoder();
        let w = LossWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = rand_img(&mut rng, 8);
        let target = rand_img(&mut rng, 8);
        let gc = GradCheckCfg { max_coords: 8, ..GradCheckCfg::default() };
        let err = grad_check(
            |tape, vs| {
                let score = tape.constant(Tensor::full(&[1], 0.37));
                let samples = vec![InpaintedSample {
                    role: InpaintRole::Synth,
                    image: vs[0],
                    rec_target: Some(vs[1]),
                    consistency_ref: vs[1],
                    d_score: score,
                }];
                inpaint_total_loss_var(tape, &samples, &w, &perc, &ident, &enc)
                    .unwrap()
                    .total
            },
            &[img, target],
            &gc,
        );
        assert!(err < 1e-3, "total rel err {}", err);
    }

    #[test]
    fn losses_are_nonnegative_on_random_inputs() {
        let perc = PerceptualExtractor::new(2);
        let ident = IdentityEmbedder::new(3);
        let enc = tiny_encoder();
        let w = LossWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let a = rand_img(&mut rng, 8);
            let b = rand_img(&mut rng, 8);
            assert!(inversion_loss(&a, &b, &w, &perc, &ident) >= 0.0);
            assert!(reconstruction_loss(&a, &b, &w, &perc, &ident) >= 0.0);
            assert!(consistency_loss(&enc, &a, &b) >= 0.0);
            let s = Tensor::from_fn(&[3], |_| rng.gen_range(0.05..0.95));
            assert!(generator_adv_loss(&s).unwrap() >= 0.0);
        }
    }
}

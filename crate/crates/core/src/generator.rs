//! 3D-aware generator: latent code -> tri-plane features -> volume render.
//!
//! A small style-modulated synthesis stack maps a stack of per-layer latent
//! rows (the extended latent space: one row per modulated conv) to three
//! axis-aligned feature planes. A point is decoded by sampling each plane
//! bilinearly, summing the three features, and running a tiny MLP that
//! yields density and color. Rendering integrates the field along camera
//! rays with the standard transmittance weights
//!
//!   w_i = T_i (1 - exp(-sigma_i delta_i)),  T_i = exp(-sum_{j<i} sigma_j delta_j)
//!
//! so color is sum_i w_i c_i and depth is sum_i w_i t_i, optionally
//! normalized by the accumulated weight.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{Intrinsics, Pose, RayBundle};
use crate::nn::{self, ParamSet, TapeParams};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentSpace {
    /// Extended latent: one independent row per modulated layer.
    WPlus,
}

/// Stack of per-layer latent rows, shape (layers, dim).
#[derive(Clone, Debug)]
pub struct LatentCode<S> {
    pub space: LatentSpace,
    pub data: Tensor<S>,
}

impl<S: Scalar> LatentCode<S> {
    pub fn new(data: Tensor<S>) -> Self {
        assert_eq!(data.rank(), 2, "latent codes are (layers, dim)");
        LatentCode { space: LatentSpace::WPlus, data }
    }

    pub fn zeros(layers: usize, dim: usize) -> Self {
        LatentCode::new(Tensor::zeros(&[layers, dim]))
    }

    pub fn sample(rng: &mut ChaCha8Rng, layers: usize, dim: usize) -> Self {
        LatentCode::new(Tensor::from_fn(&[layers, dim], |_| {
            S::from_float(StandardNormal.sample(rng))
        }))
    }

    pub fn layers(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.data.shape()[1]
    }
}

/// Per-plane spatial noise, shape (3, R, R), added to the tri-plane features
/// through learned per-plane scales.
#[derive(Clone, Debug)]
pub struct NoiseInput<S> {
    pub data: Tensor<S>,
}

impl<S: Scalar> NoiseInput<S> {
    pub fn new(data: Tensor<S>) -> Self {
        assert_eq!(data.rank(), 3);
        assert_eq!(data.shape()[0], 3, "one noise map per plane");
        NoiseInput { data }
    }

    pub fn zeros(resolution: usize) -> Self {
        NoiseInput::new(Tensor::zeros(&[3, resolution, resolution]))
    }

    pub fn sample(rng: &mut ChaCha8Rng, resolution: usize) -> Self {
        NoiseInput::new(Tensor::from_fn(&[3, resolution, resolution], |_| {
            S::from_float(StandardNormal.sample(rng))
        }))
    }

    pub fn resolution(&self) -> usize {
        self.data.shape()[1]
    }
}

/// Three feature planes packed as (3*C, R, R): XY, XZ, YZ in that order.
#[derive(Clone, Debug)]
pub struct TriPlane<S> {
    pub channels: usize,
    pub resolution: usize,
    pub data: Tensor<S>,
}

impl<S: Scalar> TriPlane<S> {
    pub fn new(channels: usize, resolution: usize, data: Tensor<S>) -> Self {
        assert_eq!(data.shape(), &[3 * channels, resolution, resolution]);
        TriPlane { channels, resolution, data }
    }
}

/// Density and color at one point.
#[derive(Clone, Copy, Debug)]
pub struct RadianceSample<S> {
    pub sigma: S,
    pub rgb: [S; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct GeneratorConfig {
    /// Latent rows; two modulated convs per synthesis stage consume them.
    pub latent_layers: usize,
    pub latent_dim: usize,
    /// Feature channels per plane.
    pub plane_channels: usize,
    pub plane_resolution: usize,
    /// Width of the synthesis convs.
    pub base_channels: usize,
    /// Hidden width of the point decoder MLP.
    pub mlp_hidden: usize,
    /// Half-extent of the cube the planes parameterize.
    pub box_radius: f64,
    /// Cameras orbit the origin at this distance.
    pub orbit_radius: f64,
    /// Added to the raw density before softplus; very negative means an
    /// initially empty scene.
    pub sigma_bias: f64,
    pub n_samples: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            latent_layers: 8,
            latent_dim: 64,
            plane_channels: 16,
            plane_resolution: 32,
            base_channels: 32,
            mlp_hidden: 32,
            box_radius: 1.0,
            orbit_radius: 2.0,
            sigma_bias: -1.0,
            n_samples: 32,
        }
    }
}

impl GeneratorConfig {
    pub fn near(&self) -> f64 {
        0.5 * self.orbit_radius
    }

    pub fn far(&self) -> f64 {
        1.5 * self.orbit_radius
    }

    fn stages(&self) -> usize {
        assert!(
            self.plane_resolution >= 4 && self.plane_resolution.is_power_of_two(),
            "plane resolution must be a power of two >= 4"
        );
        // 4 -> plane_resolution doublings, plus the stage at the base grid.
        (self.plane_resolution / 4).trailing_zeros() as usize + 1
    }

    pub fn validate(&self) {
        assert_eq!(
            self.latent_layers,
            2 * self.stages(),
            "latent layers must be 2 per synthesis stage ({} stages)",
            self.stages()
        );
        assert!(self.n_samples >= 2);
        assert!(self.box_radius > 0.0 && self.orbit_radius > self.box_radius);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SamplingConfig {
    pub n_samples: usize,
    pub near: f64,
    pub far: f64,
    /// Divide accumulated depth by accumulated weight (falling back to
    /// `far` where the weight is below `min_weight`). Off gives the raw
    /// weighted sum.
    pub normalize_depth: bool,
    pub min_weight: f64,
}

impl SamplingConfig {
    pub fn from_generator(cfg: &GeneratorConfig) -> Self {
        SamplingConfig {
            n_samples: cfg.n_samples,
            near: cfg.near(),
            far: cfg.far(),
            normalize_depth: true,
            min_weight: 1e-3,
        }
    }

    pub fn validate(&self) {
        assert!(self.n_samples >= 1);
        assert!(self.near > 0.0 && self.far > self.near);
        assert!(self.min_weight > 0.0);
    }
}

/// Anything the renderer can integrate: maps (3, M) world points to
/// per-point density (M) and color (3, M) on the tape.
pub trait RadianceField<S: Scalar> {
    fn query(&self, tape: &mut Tape<S>, points: &Tensor<S>) -> (Var, Var);
}

pub struct Generator<S> {
    pub cfg: GeneratorConfig,
    pub params: ParamSet<S>,
}

impl<S: Scalar> Generator<S> {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Self {
        cfg.validate();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let b = cfg.base_channels;
        params.insert("g.base", nn::init_normal(&mut rng, &[b, 4, 4], 1));
        for stage in 0..cfg.stages() {
            for conv in 0..2 {
                let name = format!("g.s{}.c{}", stage, conv);
                nn::add_conv(&mut params, &mut rng, &name, b, b, 3, 3);
                nn::add_dense(&mut params, &mut rng, &format!("{}.aff", name), cfg.latent_dim, b);
                // Styles start near one so modulation is initially gentle.
                *params.get_mut(&format!("{}.aff.b", name)) = Tensor::ones(&[b]);
            }
        }
        nn::add_conv(&mut params, &mut rng, "g.head", b, 3 * cfg.plane_channels, 1, 1);
        params.insert("g.noise_scale", Tensor::full(&[3], S::from_float(0.05)));
        let h = cfg.mlp_hidden;
        nn::add_dense(&mut params, &mut rng, "g.dec.l0", cfg.plane_channels, h);
        nn::add_dense(&mut params, &mut rng, "g.dec.l1", h, h);
        nn::add_dense(&mut params, &mut rng, "g.dec.out", h, 4);
        Generator { cfg, params }
    }

    /// Synthesis network: (L, d) latent plus (3, R, R) noise to packed
    /// tri-plane features (3*C, R, R).
    pub fn generate_triplane(
        &self,
        tape: &mut Tape<S>,
        tp: &TapeParams,
        latent: Var,
        noise: Var,
    ) -> Var {
        let cfg = &self.cfg;
        assert_eq!(
            tape.shape_of(latent),
            &[cfg.latent_layers, cfg.latent_dim],
            "latent shape"
        );
        assert_eq!(
            tape.shape_of(noise),
            &[3, cfg.plane_resolution, cfg.plane_resolution],
            "noise shape"
        );
        let mut x = tp.var("g.base");
        for stage in 0..cfg.stages() {
            if stage > 0 {
                x = tape.upsample_nearest2(x);
            }
            for conv in 0..2 {
                let name = format!("g.s{}.c{}", stage, conv);
                let row = tape.slice0(latent, 2 * stage + conv, 1);
                let style = nn::dense_layer(tape, tp, &format!("{}.aff", name), row);
                let style = tape.reshape(style, &[cfg.base_channels]);
                x = nn::mod_conv_layer(tape, tp, &name, x, style, 3, 3, true);
                x = tape.leaky_relu(x, 0.2);
            }
        }
        let planes = nn::conv_layer(tape, tp, "g.head", x, 1, 1);

        // Broadcast each plane's noise map across that plane's channels,
        // scaled by a learned per-plane factor.
        let scales = tp.var("g.noise_scale");
        let r = cfg.plane_resolution;
        let mut noise_rows = Vec::with_capacity(3 * cfg.plane_channels);
        for p in 0..3 {
            let nmap = tape.slice0(noise, p, 1);
            let sc = tape.slice0(scales, p, 1);
            let sc0 = tape.reshape(sc, &[]);
            let sfield = tape.fill(sc0, &[1, r, r]);
            let scaled = tape.mul(nmap, sfield);
            for _ in 0..cfg.plane_channels {
                noise_rows.push(scaled);
            }
        }
        let noise_full = tape.concat0(&noise_rows);
        tape.add(planes, noise_full)
    }

    /// Radiance field view of a tri-plane variable plus the decoder weights.
    pub fn field<'a>(&'a self, triplane: Var, tp: &'a TapeParams) -> TriPlaneField<'a> {
        TriPlaneField { cfg: &self.cfg, triplane, tp }
    }

    /// Density and color at arbitrary world points with all parameters
    /// frozen, for probing and tests.
    pub fn query_field_values(
        &self,
        latent: &LatentCode<S>,
        noise: &NoiseInput<S>,
        points: &Tensor<S>,
    ) -> Vec<RadianceSample<S>> {
        let mut tape = Tape::new();
        let tp = self.params.load_const(&mut tape);
        let lv = tape.constant(latent.data.clone());
        let nv = tape.constant(noise.data.clone());
        let tri = self.generate_triplane(&mut tape, &tp, lv, nv);
        let field = self.field(tri, &tp);
        let (sigma, rgb) = field.query(&mut tape, points);
        let m = points.shape()[1];
        let sv = tape.val_rc(sigma);
        let cv = tape.val_rc(rgb);
        (0..m)
            .map(|i| RadianceSample {
                sigma: sv.data()[i],
                rgb: [cv.data()[i], cv.data()[m + i], cv.data()[2 * m + i]],
            })
            .collect()
    }

    /// Render a full image with frozen parameters: color in [-1, 1], z-depth
    /// clamped to [near, far], and the per-pixel accumulated weight.
    pub fn render_view(
        &self,
        latent: &LatentCode<S>,
        noise: &NoiseInput<S>,
        intr: &Intrinsics<S>,
        pose: &Pose<S>,
        resolution: usize,
        sc: &SamplingConfig,
    ) -> RenderedView<S> {
        let mut tape = Tape::new();
        let tp = self.params.load_const(&mut tape);
        let lv = tape.constant(latent.data.clone());
        let nv = tape.constant(noise.data.clone());
        let tri = self.generate_triplane(&mut tape, &tp, lv, nv);
        let field = self.field(tri, &tp);
        let rays = crate::geometry::rays_for_camera(intr, pose, resolution, resolution);
        let rv = render_rays(&mut tape, &field, &rays, sc);
        finish_view(&tape, &rv, &rays, sc)
    }

    /// Draw a latent and per-plane noise, then render the same scene from
    /// two cameras. Ground truth for training without real multi-view data.
    #[allow(clippy::too_many_arguments)]
    pub fn sample_synthetic_pair(
        &self,
        rng: &mut ChaCha8Rng,
        intr: &Intrinsics<S>,
        src_pose: &Pose<S>,
        dst_pose: &Pose<S>,
        resolution: usize,
        sc: &SamplingConfig,
    ) -> SyntheticPair<S> {
        let latent = LatentCode::sample(rng, self.cfg.latent_layers, self.cfg.latent_dim);
        let noise = NoiseInput::sample(rng, self.cfg.plane_resolution);
        let src = self.render_view(&latent, &noise, intr, src_pose, resolution, sc);
        let dst = self.render_view(&latent, &noise, intr, dst_pose, resolution, sc);
        SyntheticPair { latent, noise, src, dst, src_pose: *src_pose, dst_pose: *dst_pose }
    }
}

/// A rendered camera view with everything warping needs.
#[derive(Clone, Debug)]
pub struct RenderedView<S> {
    /// (3, H, W) color in [-1, 1].
    pub color: Tensor<S>,
    /// (H, W) z-depth in [near, far].
    pub depth: Tensor<S>,
    /// (H, W) accumulated rendering weight in [0, 1+].
    pub weight_sum: Tensor<S>,
}

#[derive(Clone, Debug)]
pub struct SyntheticPair<S> {
    pub latent: LatentCode<S>,
    pub noise: NoiseInput<S>,
    pub src: RenderedView<S>,
    pub dst: RenderedView<S>,
    pub src_pose: Pose<S>,
    pub dst_pose: Pose<S>,
}

/// Tri-plane features plus decoder weights, viewed as a radiance field.
pub struct TriPlaneField<'a> {
    cfg: &'a GeneratorConfig,
    triplane: Var,
    tp: &'a TapeParams,
}

impl<S: Scalar> RadianceField<S> for TriPlaneField<'_> {
    fn query(&self, tape: &mut Tape<S>, points: &Tensor<S>) -> (Var, Var) {
        assert_eq!(points.rank(), 2);
        assert_eq!(points.shape()[0], 3);
        let m = points.shape()[1];
        let c = self.cfg.plane_channels;
        let box_r = S::from_float(self.cfg.box_radius);
        let half = S::from_float(0.5);
        let pd = points.data();
        // Normalized in-plane coordinates for the XY, XZ, YZ planes.
        let to_uv = |a: S, b: S| ((a / box_r + S::one()) * half, (b / box_r + S::one()) * half);
        let mut uvs = [
            Tensor::zeros(&[2, m]),
            Tensor::zeros(&[2, m]),
            Tensor::zeros(&[2, m]),
        ];
        for i in 0..m {
            let (x, y, z) = (pd[i], pd[m + i], pd[2 * m + i]);
            let pairs = [to_uv(x, y), to_uv(x, z), to_uv(y, z)];
            for (p, &(u, v)) in pairs.iter().enumerate() {
                uvs[p].data_mut()[i] = u;
                uvs[p].data_mut()[m + i] = v;
            }
        }
        let mut feats: Option<Var> = None;
        for (p, uv) in uvs.into_iter().enumerate() {
            let plane = tape.slice0(self.triplane, p * c, c);
            let f = tape.plane_sample(plane, std::rc::Rc::new(uv));
            feats = Some(match feats {
                None => f,
                Some(acc) => tape.add(acc, f),
            });
        }
        let feats = feats.unwrap(); // (C, M)
        let h = mlp_column(tape, self.tp, "g.dec.l0", feats, m);
        let h = tape.leaky_relu(h, 0.2);
        let h = mlp_column(tape, self.tp, "g.dec.l1", h, m);
        let h = tape.leaky_relu(h, 0.2);
        let out = mlp_column(tape, self.tp, "g.dec.out", h, m); // (4, M)
        let sigma_raw = tape.slice0(out, 0, 1);
        let sigma_raw = tape.reshape(sigma_raw, &[m]);
        let sigma_shift = tape.add_scalar(sigma_raw, self.cfg.sigma_bias);
        let sigma = tape.softplus(sigma_shift);
        let rgb_raw = tape.slice0(out, 1, 3);
        let rgb = tape.sigmoid(rgb_raw);
        (sigma, rgb)
    }
}

/// Dense layer on column-major point features: w (Co, Ci) x (Ci, M) + b.
fn mlp_column<S: Scalar>(tape: &mut Tape<S>, tp: &TapeParams, name: &str, x: Var, m: usize) -> Var {
    let w = tp.var(&format!("{}.w", name));
    let b = tp.var(&format!("{}.b", name));
    let y = tape.matmul(w, x);
    let bb = tape.broadcast_last(b, m);
    tape.add(y, bb)
}

/// Renderer outputs, all still on the tape.
pub struct RenderVars {
    /// (3, N) color, composited over black.
    pub color: Var,
    /// (N) distance along the ray (not z-depth).
    pub depth_ray: Var,
    /// (N) accumulated weight.
    pub weight_sum: Var,
}

/// Integrate a field along the rays of a bundle with midpoint sampling.
pub fn render_rays<S: Scalar>(
    tape: &mut Tape<S>,
    field: &impl RadianceField<S>,
    rays: &RayBundle<S>,
    sc: &SamplingConfig,
) -> RenderVars {
    sc.validate();
    let n = rays.width * rays.height;
    let ns = sc.n_samples;
    let near = S::from_float(sc.near);
    let dt = S::from_float((sc.far - sc.near) / ns as f64);
    let half = S::from_float(0.5);

    // Sample points grouped by ray: column ray*ns + step.
    let od = rays.origins.data();
    let dd = rays.dirs.data();
    let mut pts = vec![S::zero(); 3 * n * ns];
    let mut tvals = vec![S::zero(); n * ns];
    for ray in 0..n {
        for step in 0..ns {
            let t = near + dt * (S::from_usize(step).unwrap() + half);
            let col = ray * ns + step;
            for axis in 0..3 {
                pts[axis * n * ns + col] = od[axis * n + ray] + t * dd[axis * n + ray];
            }
            tvals[col] = t;
        }
    }
    let points = Tensor::new(vec![3, n * ns], pts);
    let (sigma, rgb) = field.query(tape, &points);
    assert_eq!(tape.shape_of(sigma), &[n * ns], "field sigma shape");
    assert_eq!(tape.shape_of(rgb), &[3, n * ns], "field rgb shape");

    let sd = tape.mul_scalar(sigma, dt.as_f64());
    let sd_rows = tape.reshape(sd, &[n, ns]);
    let acc = tape.cumsum_excl(sd_rows);
    let neg_acc = tape.neg(acc);
    let trans = tape.exp(neg_acc); // T_i
    let neg_sd = tape.neg(sd_rows);
    let esd = tape.exp(neg_sd);
    let ones = tape.ones_like(esd);
    let alpha = tape.sub(ones, esd); // 1 - exp(-sigma delta)
    let weights = tape.mul(trans, alpha); // (n, ns)
    let weight_sum = tape.sum_last(weights); // (n)

    let w1 = tape.reshape(weights, &[1, n, ns]);
    let w3 = tape.concat0(&[w1, w1, w1]);
    let rgb3 = tape.reshape(rgb, &[3, n, ns]);
    let cw = tape.mul(rgb3, w3);
    let color = tape.sum_last(cw); // (3, n)

    let tconst = tape.constant(Tensor::new(vec![n, ns], tvals));
    let dterm = tape.mul(weights, tconst);
    let depth_raw = tape.sum_last(dterm); // (n)

    let depth_ray = if sc.normalize_depth {
        // Where the ray hit nothing, report far. The mask is built from
        // forward values; no gradient crosses the branch decision.
        let wv = tape.val_rc(weight_sum);
        let minw = S::from_float(sc.min_weight);
        let mask_t = wv.map(|v| if v >= minw { S::one() } else { S::zero() });
        let inv_mask_t = mask_t.map(|v| S::one() - v);
        let mask = tape.constant(mask_t);
        let inv_mask = tape.constant(inv_mask_t.clone());
        // Denominator padded with 1 where masked out, to keep division sane.
        let denom = tape.add(weight_sum, inv_mask);
        let dnorm = tape.div(depth_raw, denom);
        let dhit = tape.mul(dnorm, mask);
        let far_fill = tape.constant(inv_mask_t.map(|v| v * S::from_float(sc.far)));
        tape.add(dhit, far_fill)
    } else {
        depth_raw
    };

    RenderVars { color, depth_ray, weight_sum }
}

/// Color map from renderer output [0, 1] to image convention [-1, 1],
/// ray distance to clamped z-depth, and reshape to images. Pixels whose
/// accumulated weight is below the threshold become background at z = far,
/// so downstream warping treats them as a fronto-parallel far plane.
pub fn finish_view<S: Scalar>(
    tape: &Tape<S>,
    rv: &RenderVars,
    rays: &RayBundle<S>,
    sc: &SamplingConfig,
) -> RenderedView<S> {
    let (h, w) = (rays.height, rays.width);
    let n = h * w;
    let color = tape
        .val(rv.color)
        .map(|v| v + v - S::one())
        .reshaped(&[3, h, w]);
    let dv = tape.val(rv.depth_ray);
    let wv = tape.val(rv.weight_sum);
    let cosv = rays.axis_cos.data();
    let (near, far) = (S::from_float(sc.near), S::from_float(sc.far));
    let minw = S::from_float(sc.min_weight);
    let mut depth = Vec::with_capacity(n);
    for i in 0..n {
        if wv.data()[i] >= minw {
            let z = dv.data()[i] * cosv[i];
            depth.push(z.max(near).min(far));
        } else {
            depth.push(far);
        }
    }
    RenderedView {
        color,
        depth: Tensor::new(vec![h, w], depth),
        weight_sum: tape.val(rv.weight_sum).clone().reshaped(&[h, w]),
    }
}

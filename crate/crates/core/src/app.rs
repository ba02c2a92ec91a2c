//! Operational shell behind the command line: image and pose file IO,
//! plain-text configuration, the checkpoint container, dataset ingestion,
//! synthesis grids, evaluation metrics, and the self-check suite.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::editing::{OptConfig, Pipeline};
use crate::encoder::{Encoder, EncoderConfig};
use crate::generator::{Generator, GeneratorConfig, SamplingConfig};
use crate::geometry::{
    orbit_pose, pose_from_record, pose_to_record, Intrinsics, Pose, Vec3, POSE_RECORD_LEN,
};
use crate::inpaint::{InpaintConfig, InpaintNet};
use crate::losses::IdentityEmbedder;
use crate::nn::ParamSet;
use crate::scalar::{DType, Scalar};
use crate::tensor::{Tape, Tensor};
use crate::training::{
    prepare_real_step_with_code, sample_novel_pose, TrainConfig, TrainSample,
};
use crate::warping::WarpConfig;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Images on disk: 8-bit PNG, mapped linearly onto [-1, 1]. The byte mapping
// rounds half to even, so every byte survives a round trip exactly.

pub fn byte_to_value<S: Scalar>(b: u8) -> S {
    S::from_float(2.0 * (b as f64 / 255.0) - 1.0)
}

pub fn value_to_byte<S: Scalar>(v: S) -> u8 {
    let unit = ((v.as_f64() + 1.0) / 2.0).clamp(0.0, 1.0);
    (unit * 255.0).round_ties_even() as u8
}

pub fn tensor_from_rgb<S: Scalar>(img: &image::RgbImage) -> Tensor<S> {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    Tensor::from_fn(&[3, h, w], |k| {
        let c = k / (h * w);
        let i = (k / w) % h;
        let j = k % w;
        byte_to_value(img.get_pixel(j as u32, i as u32)[c])
    })
}

pub fn rgb_from_tensor<S: Scalar>(t: &Tensor<S>) -> Result<image::RgbImage> {
    if t.rank() != 3 || t.shape()[0] != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected a (3, H, W) image tensor, got {:?}",
            t.shape()
        )));
    }
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let px = image::Rgb([
                value_to_byte(t.at(&[0, i, j])),
                value_to_byte(t.at(&[1, i, j])),
                value_to_byte(t.at(&[2, i, j])),
            ]);
            img.put_pixel(j as u32, i as u32, px);
        }
    }
    Ok(img)
}

pub fn load_image<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let img = image::open(path)?.to_rgb8();
    Ok(tensor_from_rgb(&img))
}

pub fn save_image<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    rgb_from_tensor(t)?.save(path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Plain-text configuration: `key = value` lines, `#` comments. The CLI layers
// `--set key=value` overrides on top, and the merged text is embedded into
// checkpoints so a saved model carries its architecture.

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        ConfigMap::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("config line {}: expected key = value", lineno + 1))
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse(format!("config line {}: empty key", lineno + 1)));
            }
            entries.insert(key.to_string(), v.trim().to_string());
        }
        Ok(ConfigMap { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        ConfigMap::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.trim().to_string(), value.trim().to_string());
    }

    /// Apply `key=value` override strings; later entries win.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("override '{}': expected key=value", s)))?;
            self.set(k, v);
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Parse(format!("config key '{}': cannot parse '{}'", key, raw))
            }),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    /// Sorted `key = value` lines; parsing this text reproduces the map.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Everything the tools need to build models, resolved from a ConfigMap with
// the compiled-in defaults filling the gaps.

#[derive(Clone, Debug)]
pub struct RuntimeConfig {
    pub gen: GeneratorConfig,
    pub enc: EncoderConfig,
    pub net: InpaintConfig,
    pub train: TrainConfig,
    pub opt: OptConfig,
    /// Shared working resolution of the encoder and inpainting network.
    pub resolution: usize,
    /// Normalized focal length of the pinhole camera.
    pub focal: f64,
    /// Synthetic dataset size when no real dataset is supplied.
    pub dataset_size: usize,
}

pub fn runtime_config(map: &ConfigMap, seed: u64) -> Result<RuntimeConfig> {
    let mut gen = GeneratorConfig::default();
    gen.latent_layers = map.get_usize("gen.latent_layers", gen.latent_layers)?;
    gen.latent_dim = map.get_usize("gen.latent_dim", gen.latent_dim)?;
    gen.plane_channels = map.get_usize("gen.plane_channels", gen.plane_channels)?;
    gen.plane_resolution = map.get_usize("gen.plane_resolution", gen.plane_resolution)?;
    gen.base_channels = map.get_usize("gen.base_channels", gen.base_channels)?;
    gen.mlp_hidden = map.get_usize("gen.mlp_hidden", gen.mlp_hidden)?;
    gen.n_samples = map.get_usize("gen.n_samples", gen.n_samples)?;
    gen.box_radius = map.get_f64("gen.box_radius", gen.box_radius)?;
    gen.orbit_radius = map.get_f64("gen.orbit_radius", gen.orbit_radius)?;
    gen.sigma_bias = map.get_f64("gen.sigma_bias", gen.sigma_bias)?;

    let resolution = map.get_usize("resolution", 32)?;
    let enc = EncoderConfig {
        resolution,
        latent_layers: gen.latent_layers,
        latent_dim: gen.latent_dim,
        base_channels: map.get_usize("enc.base_channels", 8)?,
    };
    let mut net = InpaintConfig {
        resolution,
        latent_layers: gen.latent_layers,
        latent_dim: gen.latent_dim,
        ..InpaintConfig::default()
    };
    net.base_channels = map.get_usize("net.base_channels", net.base_channels)?;
    net.n_blocks = map.get_usize("net.n_blocks", net.n_blocks)?;
    net.global_div = map.get_usize("net.global_div", net.global_div)?;
    net.demod_eps = map.get_f64("net.demod_eps", net.demod_eps)?;

    let mut train = TrainConfig { seed, ..TrainConfig::default() };
    train.encoder_iterations =
        map.get_usize("train.encoder_iterations", train.encoder_iterations)?;
    train.inpaint_iterations =
        map.get_usize("train.inpaint_iterations", train.inpaint_iterations)?;
    train.encoder_batch = map.get_usize("train.encoder_batch", train.encoder_batch)?;
    train.inpaint_batch = map.get_usize("train.inpaint_batch", train.inpaint_batch)?;
    train.lr_encoder = map.get_f64("train.lr_encoder", train.lr_encoder)?;
    train.lr_inpaint = map.get_f64("train.lr_inpaint", train.lr_inpaint)?;
    train.lr_discriminator = map.get_f64("train.lr_discriminator", train.lr_discriminator)?;
    train.yaw_range = map.get_f64("train.yaw_range", train.yaw_range)?;
    train.pitch_range = map.get_f64("train.pitch_range", train.pitch_range)?;
    train.d_base_channels = map.get_usize("train.d_base_channels", train.d_base_channels)?;
    train.use_modulation = map.get_bool("train.use_modulation", train.use_modulation)?;
    train.use_consistency_loss =
        map.get_bool("train.use_consistency_loss", train.use_consistency_loss)?;
    train.use_symmetry = map.get_bool("train.use_symmetry", train.use_symmetry)?;
    train.use_synth_data = map.get_bool("train.use_synth_data", train.use_synth_data)?;
    if let Some(r) = map.parsed::<f64>("train.stop_ratio")? {
        train.stop_ratio = Some(r);
    }
    net.use_modulation = train.use_modulation;
    net.use_symmetry = train.use_symmetry;

    let mut opt = OptConfig { seed, ..OptConfig::default() };
    opt.inversion_steps = map.get_usize("opt.inversion_steps", opt.inversion_steps)?;
    opt.tuning_steps = map.get_usize("opt.tuning_steps", opt.tuning_steps)?;
    opt.lambda_noise = map.get_f64("opt.lambda_noise", opt.lambda_noise)?;
    opt.lambda_mv = map.get_f64("opt.lambda_mv", opt.lambda_mv)?;
    opt.lambda_mse = map.get_f64("opt.lambda_mse", opt.lambda_mse)?;
    opt.lambda_perc = map.get_f64("opt.lambda_perc", opt.lambda_perc)?;
    opt.n_views = map.get_usize("opt.n_views", opt.n_views)?;
    opt.lr_latent = map.get_f64("opt.lr_latent", opt.lr_latent)?;
    opt.lr_generator = map.get_f64("opt.lr_generator", opt.lr_generator)?;
    opt.yaw_range = train.yaw_range;
    opt.pitch_range = train.pitch_range;

    Ok(RuntimeConfig {
        gen,
        enc,
        net,
        train,
        opt,
        resolution,
        focal: map.get_f64("camera.focal", 1.2)?,
        dataset_size: map.get_usize("dataset.size", 16)?,
    })
}

// ---------------------------------------------------------------------------
// Checkpoint container: one file holding named tensors, a config snapshot,
// the seed, and the iteration counter. Entries are sorted by name and every
// number is little-endian, so identical state always produces identical
// bytes.

const CKPT_MAGIC: &[u8; 8] = b"WSYNCKP1";
const CKPT_VERSION: u32 = 1;

pub struct Checkpoint<S> {
    pub seed: u64,
    pub iteration: u64,
    pub config: String,
    pub entries: BTreeMap<String, Tensor<S>>,
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated while reading {}", what)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(seed: u64, iteration: u64, config: String) -> Self {
        Checkpoint { seed, iteration, config, entries: BTreeMap::new() }
    }

    /// Add every tensor of a parameter set. Names must be globally unique
    /// across the sets stored in one checkpoint; the crate's `g.`/`e.`/`i.`/
    /// `d.` prefixes guarantee that.
    pub fn insert_params(&mut self, params: &ParamSet<S>) -> Result<()> {
        for (name, t) in params.iter() {
            if self.entries.insert(name.clone(), t.clone()).is_some() {
                return Err(Error::Checkpoint(format!("duplicate entry '{}'", name)));
            }
        }
        Ok(())
    }

    pub fn has_group(&self, prefix: &str) -> bool {
        self.entries.keys().any(|k| k.starts_with(prefix))
    }

    /// Rebuild a parameter set from every entry under `prefix`, validated
    /// name-by-name and shape-by-shape against a freshly initialized set.
    pub fn extract_params(&self, prefix: &str, fresh: &ParamSet<S>) -> Result<ParamSet<S>> {
        let mut out = ParamSet::new();
        for (name, t) in self.entries.range(prefix.to_string()..) {
            if !name.starts_with(prefix) {
                break;
            }
            out.insert(name, t.clone());
        }
        if out.is_empty() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds no '{}*' parameters",
                prefix
            )));
        }
        if out.len() != fresh.len() {
            return Err(Error::Checkpoint(format!(
                "'{}*' parameter count {} does not match the configured architecture ({})",
                prefix,
                out.len(),
                fresh.len()
            )));
        }
        for (name, t) in fresh.iter() {
            let loaded = if out.contains(name) {
                out.get(name)
            } else {
                return Err(Error::Checkpoint(format!("missing parameter '{}'", name)));
            };
            if loaded.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    name,
                    loaded.shape(),
                    t.shape()
                )));
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(S::DTYPE.code());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes_vec());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader { buf, pos: 0 };
        if r.take(8, "magic")? != CKPT_MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32("version")?;
        if version != CKPT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", version)));
        }
        let seed = r.u64("seed")?;
        let iteration = r.u64("iteration")?;
        let clen = r.u32("config length")? as usize;
        let config = String::from_utf8(r.take(clen, "config")?.to_vec())
            .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
        let count = r.u32("entry count")? as usize;
        let mut entries = BTreeMap::new();
        for e in 0..count {
            let nlen = r.u16("name length")? as usize;
            let name = String::from_utf8(r.take(nlen, "name")?.to_vec())
                .map_err(|_| Error::Checkpoint(format!("entry {} name is not UTF-8", e)))?;
            let code = r.u8("dtype")?;
            let dtype = DType::from_code(code)
                .ok_or_else(|| Error::Checkpoint(format!("'{}': unknown dtype {}", name, code)))?;
            if dtype != S::DTYPE {
                return Err(Error::Checkpoint(format!(
                    "'{}' stored as {:?}, expected {:?}",
                    name,
                    dtype,
                    S::DTYPE
                )));
            }
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dims")? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * S::byte_len(), "tensor data")?;
            let data: Vec<S> =
                raw.chunks_exact(S::byte_len()).map(S::from_le_slice).collect();
            if entries.insert(name.clone(), Tensor::new(shape, data)).is_some() {
                return Err(Error::Checkpoint(format!("duplicate entry '{}'", name)));
            }
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last entry",
                buf.len() - r.pos
            )));
        }
        Ok(Checkpoint { seed, iteration, config, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

/// Rebuild the synthesis stack from a checkpoint that holds generator,
/// encoder, and inpainting weights.
pub fn pipeline_from_checkpoint<S: Scalar>(
    ckpt: &Checkpoint<S>,
) -> Result<(Pipeline<S>, RuntimeConfig)> {
    let map = ConfigMap::parse(&ckpt.config)?;
    let rc = runtime_config(&map, ckpt.seed)?;
    let mut gen = Generator::new(rc.gen, 0);
    gen.params = ckpt.extract_params("g.", &gen.params)?;
    let mut enc = Encoder::new(rc.enc, 0);
    enc.params = ckpt.extract_params("e.", &enc.params)?;
    let mut net = InpaintNet::new(rc.net, 0);
    net.params = ckpt.extract_params("i.", &net.params)?;
    let warp = WarpConfig::for_far(gen.cfg.far());
    let pipe = Pipeline {
        intrinsics: Intrinsics::centered(S::from_float(rc.focal)),
        sampling: SamplingConfig::from_generator(&gen.cfg),
        warp,
        generator: gen,
        encoder: enc,
        inpaint: net,
    };
    pipe.validate();
    Ok((pipe, rc))
}

// ---------------------------------------------------------------------------
// Dataset manifests: a directory of images plus a pose file. Each pose line
// is `<image name> <25 floats> [tag]`; the 25 floats are the row-major 4x4
// camera-to-world matrix followed by the row-major normalized 3x3 intrinsic
// matrix. Tags are free-form; `group:<id>` joins entries into one multi-view
// record for evaluation, anything else marks a split.

#[derive(Clone, Debug)]
pub struct ManifestEntry<S> {
    pub name: String,
    pub path: PathBuf,
    pub pose: Pose<S>,
    pub intrinsics: Intrinsics<S>,
    pub tag: String,
}

#[derive(Clone, Debug, Default)]
pub struct DatasetManifest<S> {
    pub entries: Vec<ManifestEntry<S>>,
}

pub fn format_pose_line<S: Scalar>(
    name: &str,
    pose: &Pose<S>,
    intr: &Intrinsics<S>,
    tag: &str,
) -> String {
    let rec = pose_to_record(pose, intr);
    let mut line = String::from(name);
    for v in rec {
        line.push(' ');
        line.push_str(&format!("{:?}", v.as_f64()));
    }
    if !tag.is_empty() {
        line.push(' ');
        line.push_str(tag);
    }
    line
}

/// Parse one manifest line: `<image name> <25 floats> [tag]`. `row` is the
/// 1-based line number used in error messages.
pub fn parse_pose_line<S: Scalar>(
    line: &str,
    row: usize,
) -> Result<(String, Pose<S>, Intrinsics<S>, String)> {
    let mut tokens = line.split_whitespace();
    let name = tokens
        .next()
        .ok_or_else(|| Error::Parse(format!("pose row {}: empty line", row)))?
        .to_string();
    let rest: Vec<&str> = tokens.collect();
    if rest.len() < POSE_RECORD_LEN {
        return Err(Error::Parse(format!(
            "pose row {}: expected {} floats after the image name, found {}",
            row,
            POSE_RECORD_LEN,
            rest.len()
        )));
    }
    let mut rec = [S::zero(); POSE_RECORD_LEN];
    for (i, tok) in rest[..POSE_RECORD_LEN].iter().enumerate() {
        rec[i] = S::from_float(tok.parse::<f64>().map_err(|_| {
            Error::Parse(format!("pose row {}: float {} is malformed: '{}'", row, i, tok))
        })?);
    }
    let tag = match rest.len() {
        n if n == POSE_RECORD_LEN => String::new(),
        n if n == POSE_RECORD_LEN + 1 => rest[POSE_RECORD_LEN].to_string(),
        _ => {
            return Err(Error::Parse(format!(
                "pose row {}: unexpected trailing tokens after the tag",
                row
            )))
        }
    };
    let (pose, intr) =
        pose_from_record(&rec).map_err(|e| Error::Parse(format!("pose row {}: {}", row, e)))?;
    Ok((name, pose, intr, tag))
}

/// Read a dataset directory and its pose file into a validated manifest.
pub fn ingest<S: Scalar>(dir: &Path, pose_file: &Path) -> Result<DatasetManifest<S>> {
    let text = std::fs::read_to_string(pose_file)?;
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, pose, intrinsics, tag) = parse_pose_line::<S>(line, lineno + 1)?;
        let path = dir.join(&name);
        if !path.is_file() {
            return Err(Error::Parse(format!(
                "pose row {}: image '{}' not found in {}",
                lineno + 1,
                name,
                dir.display()
            )));
        }
        entries.push(ManifestEntry { name, path, pose, intrinsics, tag });
    }
    if entries.is_empty() {
        eprintln!("warning: manifest from {} is empty", pose_file.display());
    }
    Ok(DatasetManifest { entries })
}

/// Load the manifest's images as training samples at the given resolution.
pub fn load_samples<S: Scalar>(
    manifest: &DatasetManifest<S>,
    resolution: usize,
) -> Result<Vec<TrainSample<S>>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let image = load_image::<S>(&e.path)?;
            if image.shape() != [3, resolution, resolution] {
                return Err(Error::InvalidArgument(format!(
                    "image '{}' has shape {:?}, expected (3, {}, {})",
                    e.name,
                    image.shape(),
                    resolution,
                    resolution
                )));
            }
            Ok(TrainSample { image, pose: e.pose })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Synthesis grids.

/// The five default novel cameras: front, right, left, top, down.
pub fn default_novel_poses<S: Scalar>(radius: f64) -> Vec<(String, Pose<S>)> {
    let orbit = |yaw: f64, pitch: f64| {
        orbit_pose(
            Vec3::zero(),
            S::from_float(radius),
            S::from_float(yaw),
            S::from_float(pitch),
        )
    };
    vec![
        ("front".to_string(), orbit(0.0, 0.0)),
        ("right".to_string(), orbit(0.35, 0.0)),
        ("left".to_string(), orbit(-0.35, 0.0)),
        ("top".to_string(), orbit(0.0, 0.25)),
        ("down".to_string(), orbit(0.0, -0.25)),
    ]
}

pub struct SynthesisGrid<S> {
    /// Labeled synthesized views, in target order.
    pub views: Vec<(String, Tensor<S>)>,
    /// Vertical stack: the input row first, one row per synthesized view.
    pub grid: Tensor<S>,
}

fn stack_rows<S: Scalar>(rows: &[&Tensor<S>]) -> Tensor<S> {
    let (h, w) = (rows[0].shape()[1], rows[0].shape()[2]);
    Tensor::from_fn(&[3, rows.len() * h, w], |k| {
        let c = k / (rows.len() * h * w);
        let i = (k / w) % (rows.len() * h);
        let j = k % w;
        rows[i / h].at(&[c, i % h, j])
    })
}

/// Run the full forward path once per target camera and assemble the
/// input-plus-views grid image.
pub fn synthesize_grid<S: Scalar>(
    pipe: &Pipeline<S>,
    image: &Tensor<S>,
    pose: &Pose<S>,
    targets: &[(String, Pose<S>)],
) -> Result<SynthesisGrid<S>> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no target poses to synthesize".into()));
    }
    let mut views = Vec::with_capacity(targets.len());
    for (label, target) in targets {
        let img = pipe.synthesize_view(image, pose, target)?;
        views.push((label.clone(), img));
    }
    let mut rows: Vec<&Tensor<S>> = vec![image];
    rows.extend(views.iter().map(|(_, t)| t));
    Ok(SynthesisGrid { grid: stack_rows(&rows), views })
}

// ---------------------------------------------------------------------------
// Metrics.

/// PSNR over the pixels where `excluded` is zero, with signal range [-1, 1].
/// Identical selections return infinity.
pub fn masked_psnr<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, excluded: Option<&Tensor<S>>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "psnr input shapes");
    let (h, w) = (a.shape()[1], a.shape()[2]);
    if let Some(m) = excluded {
        assert_eq!(m.shape(), &[h, w], "psnr mask shape");
    }
    let mut err = 0.0;
    let mut count = 0usize;
    for p in 0..h * w {
        if let Some(m) = excluded {
            if m.data()[p] != S::zero() {
                continue;
            }
        }
        for c in 0..3 {
            let d = (a.data()[c * h * w + p] - b.data()[c * h * w + p]).as_f64();
            err += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return f64::INFINITY;
    }
    let mse = err / count as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (4.0 / mse).log10()
    }
}

/// Cosine similarity of the identity embeddings of two images.
pub fn identity_similarity<S: Scalar>(
    embedder: &IdentityEmbedder<S>,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> f64 {
    let ea = embedder.embed(a);
    let eb = embedder.embed(b);
    ea.data().iter().zip(eb.data()).map(|(x, y)| (*x * *y).as_f64()).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewScore {
    pub label: String,
    pub masked_psnr: f64,
    pub identity: f64,
    pub consistency: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub latent_consistency: f64,
    pub identity_similarity: f64,
    pub masked_psnr: f64,
    pub per_view: Vec<ViewScore>,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metrics report")?;
        writeln!(f, "  latent-consistency  {:.6}", self.latent_consistency)?;
        writeln!(f, "  identity-similarity {:.6}", self.identity_similarity)?;
        writeln!(f, "  masked-psnr         {:.3}", self.masked_psnr)?;
        writeln!(f, "per view:")?;
        for v in &self.per_view {
            writeln!(
                f,
                "  {:<24} psnr {:>8.3}  id {:>9.6}  consistency {:.6}",
                v.label, v.masked_psnr, v.identity, v.consistency
            )?;
        }
        Ok(())
    }
}

/// One record to score: an image, its camera, and its manifest tag.
#[derive(Clone, Debug)]
pub struct EvalRecord<S> {
    pub name: String,
    pub image: Tensor<S>,
    pub pose: Pose<S>,
    pub tag: String,
}

pub struct EvalOutputs<S> {
    pub report: MetricsReport,
    /// Every synthesized image behind the scores, for recomputation.
    pub synthesized: Vec<(String, Tensor<S>)>,
}

/// Score a record set. Entries tagged `group:<id>` form multi-view records:
/// the first entry is the input and the rest are held-out ground truth
/// views to synthesize and compare against. All other entries are scored
/// single-view through the re-warp round trip at a seeded novel pose.
pub fn evaluate<S: Scalar>(
    pipe: &Pipeline<S>,
    records: &[EvalRecord<S>],
    embedder: &IdentityEmbedder<S>,
    seed: u64,
) -> Result<EvalOutputs<S>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut singles: Vec<usize> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.tag.starts_with("group:") {
            groups.entry(r.tag.as_str()).or_default().push(i);
        } else {
            singles.push(i);
        }
    }
    let mut per_view = Vec::new();
    let mut synthesized = Vec::new();
    let sampler = TrainConfig::default();
    for (tag, members) in groups {
        if members.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "multi-view record '{}' needs at least two entries",
                tag
            )));
        }
        let input = &records[members[0]];
        for &j in &members[1..] {
            let held = &records[j];
            let synth = pipe.synthesize_view(&input.image, &input.pose, &held.pose)?;
            per_view.push(ViewScore {
                label: held.name.clone(),
                masked_psnr: masked_psnr(&synth, &held.image, None),
                identity: identity_similarity(embedder, &synth, &held.image),
                consistency: crate::losses::consistency_loss(
                    &pipe.encoder,
                    &synth,
                    &held.image,
                )
                .as_f64(),
            });
            synthesized.push((held.name.clone(), synth));
        }
    }
    for i in singles {
        let rec = &records[i];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((5 << 48) ^ i as u64);
        let novel: Pose<S> =
            sample_novel_pose(&mut rng, &sampler, pipe.generator.cfg.orbit_radius);
        let code = pipe.encoder.encode(&rec.image)?;
        let inputs = prepare_real_step_with_code(
            &pipe.generator,
            code.clone(),
            &rec.image,
            &rec.pose,
            &novel,
            &pipe.intrinsics,
            &pipe.sampling,
            &pipe.warp,
        )?;
        let novel_img =
            pipe.inpaint.inpaint(&inputs.initial_novel, &inputs.mirror_novel, &code)?;
        let rewarp_img =
            pipe.inpaint.inpaint(&inputs.initial_rewarp, &inputs.mirror_rewarp, &code)?;
        per_view.push(ViewScore {
            label: rec.name.clone(),
            masked_psnr: masked_psnr(&rewarp_img, &rec.image, Some(&inputs.rewarp_mask)),
            identity: identity_similarity(embedder, &novel_img, &rec.image),
            consistency: crate::losses::consistency_loss(&pipe.encoder, &novel_img, &rec.image)
                .as_f64(),
        });
        synthesized.push((format!("{}::novel", rec.name), novel_img));
        synthesized.push((format!("{}::rewarp", rec.name), rewarp_img));
    }
    let n = per_view.len() as f64;
    let report = MetricsReport {
        latent_consistency: per_view.iter().map(|v| v.consistency).sum::<f64>() / n,
        identity_similarity: per_view.iter().map(|v| v.identity).sum::<f64>() / n,
        masked_psnr: per_view.iter().map(|v| v.masked_psnr).sum::<f64>() / n,
        per_view,
    };
    Ok(EvalOutputs { report, synthesized })
}

// ---------------------------------------------------------------------------
// Self-check: fast recomputations of every module's core invariant, run on
// a fresh clone with no trained weights. The demodulation epsilon is
// injectable so a deliberately corrupted value flips that check to failed.

pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

fn check_geometry() -> CheckOutcome {
    use crate::geometry::{mirror_pose, project, relative_pose, unproject};
    let intr = Intrinsics::<f64>::centered(1.1);
    let mut worst = 0.0f64;
    for k in 0..32 {
        let u = 0.1 + 0.025 * k as f64;
        let v = 0.9 - 0.02 * k as f64;
        let z = 1.0 + 0.05 * k as f64;
        let p = unproject(&intr, u, v, z);
        if let Some((pu, pv, pz)) = project(&intr, p) {
            worst = worst.max((pu - u).abs()).max((pv - v).abs()).max((pz - z).abs());
        } else {
            return outcome("geometry", false, "projection lost a visible point".into());
        }
    }
    let a = orbit_pose(Vec3::<f64>::zero(), 2.0, 0.3, 0.1);
    let b = orbit_pose(Vec3::<f64>::zero(), 2.0, -0.2, -0.15);
    let ab = relative_pose(&a, &b);
    let ba = relative_pose(&b, &a);
    let probe = Vec3::new(0.3, -0.2, 0.5);
    let back = ba.apply(ab.apply(probe));
    let comp = (back.x - probe.x)
        .abs()
        .max((back.y - probe.y).abs())
        .max((back.z - probe.z).abs());
    let m2 = mirror_pose(&mirror_pose(&a));
    let invol = a.t.sub(m2.t);
    let invol_exact = invol.x == 0.0 && invol.y == 0.0 && invol.z == 0.0;
    let pass = worst < 1e-6 && comp < 1e-6 && invol_exact;
    outcome(
        "geometry",
        pass,
        format!("reproject {:.2e}, compose {:.2e}, involution exact: {}", worst, comp, invol_exact),
    )
}

struct SlabField {
    sigma: f64,
}

impl crate::generator::RadianceField<f64> for SlabField {
    fn query(
        &self,
        tape: &mut Tape<f64>,
        points: &Tensor<f64>,
    ) -> (crate::tensor::Var, crate::tensor::Var) {
        let m = points.shape()[1];
        let sig = Tensor::full(&[m], self.sigma);
        let rgb = Tensor::from_fn(&[3, m], |k| [0.3, 0.8, 0.5][k / m]);
        (tape.constant(sig), tape.constant(rgb))
    }
}

fn check_renderer() -> CheckOutcome {
    use crate::generator::render_rays;
    use crate::geometry::rays_for_camera;
    let intr = Intrinsics::<f64>::centered(1.0);
    let pose = orbit_pose(Vec3::zero(), 2.0, 0.0, 0.0);
    let rays = rays_for_camera(&intr, &pose, 2, 2);
    let sc = SamplingConfig {
        n_samples: 3,
        near: 1.0,
        far: 3.0,
        normalize_depth: false,
        min_weight: 1e-3,
    };
    let sigma = 0.9;
    let mut tape = Tape::new();
    let field = SlabField { sigma };
    let rv = render_rays(&mut tape, &field, &rays, &sc);
    // Hand compositing: three midpoint samples along unit-direction rays,
    // constant sigma and color, so alpha = 1 - exp(-sigma dt) everywhere.
    let dt = (3.0 - 1.0) / 3.0;
    let n = 4;
    let mut worst = 0.0f64;
    let mut wsum_ok = true;
    for ray in 0..n {
        let alpha = 1.0 - (-sigma * dt).exp();
        let mut trans = 1.0;
        let mut color = 0.0;
        let mut wsum = 0.0;
        for _ in 0..3 {
            let wgt = trans * alpha;
            color += wgt * 0.3;
            wsum += wgt;
            trans *= 1.0 - alpha;
        }
        let got = tape.val(rv.color).data()[ray];
        worst = worst.max((got - color).abs());
        let gw = tape.val(rv.weight_sum).data()[ray];
        worst = worst.max((gw - wsum).abs());
        if gw > 1.0 + 1e-9 {
            wsum_ok = false;
        }
    }
    // Opaque slab depth against dense integration with many samples.
    let sc_dense = SamplingConfig { n_samples: 400, ..sc };
    let mut tape2 = Tape::new();
    let dense = render_rays(&mut tape2, &SlabField { sigma: 25.0 }, &rays, &sc_dense);
    let sc_ref = SamplingConfig { n_samples: 4000, ..sc };
    let mut tape3 = Tape::new();
    let denser = render_rays(&mut tape3, &SlabField { sigma: 25.0 }, &rays, &sc_ref);
    let mut depth_err = 0.0f64;
    for ray in 0..n {
        let d1 = tape2.val(dense.depth_ray).data()[ray];
        let d2 = tape3.val(denser.depth_ray).data()[ray];
        depth_err = depth_err.max((d1 - d2).abs());
    }
    let pass = worst < 1e-6 && wsum_ok && depth_err < 1e-3;
    outcome(
        "renderer",
        pass,
        format!("compositing {:.2e}, slab depth {:.2e}, weights bounded: {}", worst, depth_err, wsum_ok),
    )
}

struct BumpField;

impl crate::generator::RadianceField<f64> for BumpField {
    fn query(
        &self,
        tape: &mut Tape<f64>,
        points: &Tensor<f64>,
    ) -> (crate::tensor::Var, crate::tensor::Var) {
        let m = points.shape()[1];
        let pd = points.data();
        let mut sig = Vec::with_capacity(m);
        let mut rgb = vec![0.0; 3 * m];
        for i in 0..m {
            let (x, y, z) = (pd[i], pd[m + i], pd[2 * m + i]);
            let r2 = x * x + y * y + z * z;
            sig.push(30.0 * (-6.0 * r2).exp());
            rgb[i] = 0.5 + 0.4 * x;
            rgb[m + i] = 0.5 + 0.4 * y;
            rgb[2 * m + i] = 0.5 - 0.4 * z;
        }
        let sv = tape.constant(Tensor::new(vec![m], sig));
        let cv = tape.constant(Tensor::new(vec![3, m], rgb));
        (sv, cv)
    }
}

fn check_warp() -> CheckOutcome {
    use crate::generator::{finish_view, render_rays};
    use crate::geometry::{rays_for_camera, relative_pose};
    use crate::warping::{depth_with_fallback, forward_warp, forward_warp_with_skip};
    let res = 24;
    let intr = Intrinsics::<f64>::centered(1.0);
    let sc = SamplingConfig {
        n_samples: 48,
        near: 1.0,
        far: 3.0,
        normalize_depth: true,
        min_weight: 1e-3,
    };
    let render = |pose: &Pose<f64>| {
        let mut tape = Tape::new();
        let rays = rays_for_camera(&intr, pose, res, res);
        let rv = render_rays(&mut tape, &BumpField, &rays, &sc);
        finish_view(&tape, &rv, &rays, &sc)
    };
    let a = orbit_pose(Vec3::zero(), 2.0, 0.0, 0.0);
    let b = orbit_pose(Vec3::zero(), 2.0, 0.3, 0.0);
    let va = render(&a);
    let vb = render(&b);
    let cfg = WarpConfig::for_far(3.0);
    // Identity pose: exact passthrough.
    let idw = match forward_warp(&va.color, &va.depth, &relative_pose(&a, &a), &intr, &cfg) {
        Ok(w) => w,
        Err(e) => return outcome("warp", false, format!("identity warp failed: {}", e)),
    };
    let id_ok = idw.image.bit_eq(&va.color)
        && idw.mask.data().data().iter().all(|&v| v == 0.0);
    // Round trip a -> b -> a on co-visible pixels.
    let fwd = match forward_warp(&va.color, &va.depth, &relative_pose(&a, &b), &intr, &cfg) {
        Ok(w) => w,
        Err(e) => return outcome("warp", false, format!("forward warp failed: {}", e)),
    };
    let back_depth = depth_with_fallback(&fwd, &vb.depth);
    let back = match forward_warp_with_skip(
        &fwd.image,
        &back_depth,
        &relative_pose(&b, &a),
        &intr,
        &cfg,
        fwd.mask.data(),
    ) {
        Ok(w) => w,
        Err(e) => return outcome("warp", false, format!("reverse warp failed: {}", e)),
    };
    let mut err = 0.0;
    let mut count = 0usize;
    for p in 0..res * res {
        if back.mask.data().data()[p] != 0.0 {
            continue;
        }
        for c in 0..3 {
            err += (back.image.data()[c * res * res + p] - va.color.data()[c * res * res + p])
                .abs();
            count += 1;
        }
    }
    let mae = if count == 0 { f64::INFINITY } else { err / count as f64 };
    let pass = id_ok && count > res * res / 2 && mae < 2e-2;
    outcome(
        "warp",
        pass,
        format!("identity exact: {}, roundtrip mae {:.4} over {} values", id_ok, mae, count),
    )
}

fn check_demodulation(eps: f64) -> CheckOutcome {
    use crate::inpaint::modulate_weights;
    let w = Tensor::<f64>::ones(&[1, 9]);
    let style = Tensor::<f64>::ones(&[1]);
    let out = match modulate_weights(&w, &style, eps) {
        Ok(t) => t,
        Err(e) => return outcome("demodulation", false, format!("{}", e)),
    };
    let closed_form = out.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-7);
    // Scale invariance of the demodulated weights.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let wr = Tensor::<f64>::from_fn(&[2, 6], |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
    let sr = Tensor::<f64>::from_fn(&[3], |_| rand::Rng::gen_range(&mut rng, 0.5..2.0));
    let s3 = sr.map(|v| 3.0 * v);
    let base = modulate_weights(&wr, &sr, eps);
    let scaled = modulate_weights(&wr, &s3, eps);
    let invariant = match (base, scaled) {
        (Ok(a), Ok(b)) => a.max_abs_diff(&b) < 1e-6,
        _ => false,
    };
    outcome(
        "demodulation",
        closed_form && invariant,
        format!("all-ones kernel -> 1/3: {}, scale invariance: {}", closed_form, invariant),
    )
}

fn check_film() -> CheckOutcome {
    let cfg = InpaintConfig {
        resolution: 16,
        base_channels: 4,
        n_blocks: 1,
        latent_layers: 4,
        latent_dim: 8,
        ..InpaintConfig::default()
    };
    let mut net = InpaintNet::<f64>::new(cfg, 3);
    // Zero the fusion convs and bias the scale to one, shift to zero: the
    // fusion must return its direct input bit for bit.
    for name in ["i.film.s.w", "i.film.t.w", "i.film.t.b"] {
        let t = net.params.get_mut(name);
        *t = Tensor::zeros(&t.shape().to_vec());
    }
    let sb = net.params.get_mut("i.film.s.b");
    *sb = Tensor::ones(&sb.shape().to_vec());
    let bn = net.cfg.bottleneck();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = Tensor::<f64>::from_fn(&[bn, 2, 2], |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
    let fm = Tensor::<f64>::from_fn(&[bn, 2, 2], |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
    match net.film_fuse(&f, &fm) {
        Ok(out) => outcome("film", out.bit_eq(&f), "identity configuration is exact".into()),
        Err(e) => outcome("film", false, format!("{}", e)),
    }
}

fn check_dft() -> CheckOutcome {
    use crate::inpaint::{dft2, idft2};
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::<f64>::from_fn(&[2, 4, 4], |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
    let spec = match dft2(&x) {
        Ok(s) => s,
        Err(e) => return outcome("dft", false, format!("{}", e)),
    };
    let back = match idft2(&spec) {
        Ok(b) => b,
        Err(e) => return outcome("dft", false, format!("{}", e)),
    };
    let round = back.max_abs_diff(&x);
    // Brute-force O(n^4) DFT of channel 0.
    let n = 4;
    let mut worst = 0.0f64;
    for u in 0..n {
        for v in 0..n {
            let mut re = 0.0;
            let mut im = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let ang = -2.0 * std::f64::consts::PI * ((u * a + v * b) as f64) / n as f64;
                    let val = x.at(&[0, a, b]);
                    re += val * ang.cos();
                    im += val * ang.sin();
                }
            }
            worst = worst.max((spec.at(&[0, u, v]) - re).abs());
            worst = worst.max((spec.at(&[2, u, v]) - im).abs());
        }
    }
    let pass = round < 1e-5 && worst < 1e-5;
    outcome("dft", pass, format!("roundtrip {:.2e}, matrix oracle {:.2e}", round, worst))
}

fn check_gradients() -> CheckOutcome {
    use crate::tensor::check::{grad_check, GradCheckCfg};
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = Tensor::<f64>::from_fn(&[3, 4, 4], |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
    let b = Tensor::<f64>::from_fn(&[3, 4, 4], |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
    let mse_err = grad_check(
        |tape, inputs| tape.mse(inputs[0], inputs[1]),
        &[a.clone(), b],
        &GradCheckCfg::default(),
    );
    let w = Tensor::<f64>::from_fn(&[2, 3 * 9], |_| rand::Rng::gen_range(&mut rng, -0.5..0.5));
    let conv_err = grad_check(
        |tape, inputs| {
            let y = tape.conv2d(inputs[0], inputs[1], 3, 3);
            tape.sum_all(y)
        },
        &[a, w],
        &GradCheckCfg::default(),
    );
    let pass = mse_err < 1e-4 && conv_err < 1e-3;
    outcome("gradients", pass, format!("mse {:.2e}, conv {:.2e}", mse_err, conv_err))
}

fn check_adversarial_values() -> CheckOutcome {
    use crate::losses::{discriminator_adv_loss, generator_adv_loss, LossWeights};
    let half = Tensor::<f64>::full(&[2], 0.5);
    let g = match generator_adv_loss(&half) {
        Ok(v) => v,
        Err(e) => return outcome("adversarial", false, format!("{}", e)),
    };
    let w = LossWeights { gamma: 0.0, ..LossWeights::default() };
    let d = match discriminator_adv_loss(&half, &half, &Tensor::zeros(&[2]), &w) {
        Ok(v) => v,
        Err(e) => return outcome("adversarial", false, format!("{}", e)),
    };
    let ln2 = std::f64::consts::LN_2;
    let pass = (g - ln2).abs() < 1e-4 && (d - 2.0 * ln2).abs() < 1e-4;
    outcome("adversarial", pass, format!("G at 0.5: {:.6}, D floor: {:.6}", g, d))
}

fn check_checkpoint() -> CheckOutcome {
    let mut ck = Checkpoint::<f64>::new(7, 3, "resolution = 16\n".into());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = ParamSet::new();
    params.insert("g.test.w", Tensor::from_fn(&[2, 3], |_| rand::Rng::gen_range(&mut rng, -1.0..1.0)));
    if ck.insert_params(&params).is_err() {
        return outcome("checkpoint", false, "insert failed".into());
    }
    let bytes = ck.to_bytes();
    let back = match Checkpoint::<f64>::from_bytes(&bytes) {
        Ok(b) => b,
        Err(e) => return outcome("checkpoint", false, format!("{}", e)),
    };
    let stable = back.to_bytes() == bytes && back.seed == 7 && back.iteration == 3;
    outcome("checkpoint", stable, format!("{} bytes, byte-stable: {}", bytes.len(), stable))
}

fn check_png_conversion() -> CheckOutcome {
    let exact = (0..=255u8).all(|b| value_to_byte(byte_to_value::<f64>(b)) == b);
    outcome("png-conversion", exact, format!("all 256 byte values round trip: {}", exact))
}

/// Run every invariant check. `demod_eps` is the demodulation epsilon under
/// test; pass a corrupted value (e.g. -1.0) as a negative control and the
/// demodulation check fails.
pub fn selfcheck(demod_eps: f64) -> Vec<CheckOutcome> {
    vec![
        check_geometry(),
        check_renderer(),
        check_warp(),
        check_demodulation(demod_eps),
        check_film(),
        check_dft(),
        check_gradients(),
        check_adversarial_values(),
        check_checkpoint(),
        check_png_conversion(),
    ]
}

/// Plain-text table plus the overall verdict.
pub fn selfcheck_report(outcomes: &[CheckOutcome]) -> (String, bool) {
    let mut text = String::from("self-check\n");
    let mut all = true;
    for o in outcomes {
        all &= o.passed;
        text.push_str(&format!(
            "  {:<16} {}  {}\n",
            o.name,
            if o.passed { "pass" } else { "FAIL" },
            o.detail
        ));
    }
    text.push_str(if all { "all checks passed\n" } else { "SOME CHECKS FAILED\n" });
    (text, all)
}

//! Command line for the warping-and-inpainting synthesis stack. Every
//! subcommand is deterministic in --seed: the same invocation writes the
//! same bytes.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use warpsynth::app::{
    default_novel_poses, evaluate, format_pose_line, ingest, load_image, load_samples,
    parse_pose_line, pipeline_from_checkpoint, runtime_config, save_image, selfcheck,
    selfcheck_report, synthesize_grid, Checkpoint, ConfigMap, EvalRecord, RuntimeConfig,
};
use warpsynth::editing::{invert, multiview_set, pivotal_tune, EditDirection, Pipeline};
use warpsynth::encoder::Encoder;
use warpsynth::generator::{Generator, SamplingConfig};
use warpsynth::geometry::{Intrinsics, Pose};
use warpsynth::losses::{IdentityEmbedder, LossWeights, PerceptualExtractor};
use warpsynth::tensor::Tensor;
use warpsynth::training::{make_synthetic_dataset, train_encoder, train_inpaint, TrainSample};
use warpsynth::warping::{forward_warp, WarpConfig};
use warpsynth::{Error, Result};

/// Working precision of the command line.
type P = f64;

#[derive(Parser)]
#[command(name = "warpsynth", version, about = "Single-image novel view synthesis and editing")]
struct Cli {
    /// Seed for every random choice a subcommand makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. --set resolution=32. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the image-to-latent encoder against the frozen generator.
    TrainEncoder {
        /// Dataset directory of PNGs; synthetic renders are used when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pose file for --data.
        #[arg(long)]
        poses: Option<PathBuf>,
        /// Output checkpoint.
        #[arg(long, default_value = "encoder.ckpt")]
        out: PathBuf,
    },
    /// Train the inpainting network and its discriminator on warped views.
    TrainSvinet {
        /// Checkpoint with the generator and trained encoder.
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
    },
    /// Synthesize novel views of one image and assemble a comparison grid.
    Synthesize {
        /// Checkpoint with generator, encoder, and inpainting weights.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Pose file; the record matching the image file name is its camera.
        #[arg(long)]
        poses: PathBuf,
        /// Pose file of labeled target cameras (default: five standard views).
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Invert an image, tune the generator around the pivot, apply an edit.
    Edit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Text file of layers*dim whitespace-separated direction floats.
        #[arg(long)]
        direction: PathBuf,
        /// Edit strength along the direction.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Forward-warp an image to a target camera; save the image and mask.
    Warp {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Pose file whose first record is the target camera.
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Score a model on a dataset and write a metrics report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Report file.
        #[arg(long, default_value = "report.txt")]
        out: PathBuf,
    },
    /// Run the built-in invariant checks; exits nonzero on any failure.
    Selfcheck {
        /// Demodulation epsilon under test; -1 is the negative control.
        #[arg(long, default_value_t = 1e-8)]
        demod_eps: f64,
    },
    /// Render a synthetic dataset: PNG images plus a pose file.
    MakeDataset {
        #[arg(long, default_value = "dataset")]
        out: PathBuf,
        /// Number of images (default: the dataset.size config key).
        #[arg(long)]
        count: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<ConfigMap> {
    let mut map = match &cli.config {
        Some(path) => ConfigMap::from_file(path)?,
        None => ConfigMap::new(),
    };
    map.apply_overrides(&cli.set)?;
    Ok(map)
}

/// Feature extractors behind the perceptual and identity metrics, derived
/// from the run seed so training and evaluation agree.
fn metric_nets(seed: u64) -> (PerceptualExtractor<P>, IdentityEmbedder<P>) {
    (PerceptualExtractor::new(seed ^ 0x9E3C), IdentityEmbedder::new(seed ^ 0x1DE4))
}

fn camera(rc: &RuntimeConfig) -> Intrinsics<P> {
    Intrinsics::centered(rc.focal)
}

fn dataset(
    rc: &RuntimeConfig,
    gen: &Generator<P>,
    intr: &Intrinsics<P>,
    sc: &SamplingConfig,
    data: &Option<PathBuf>,
    poses: &Option<PathBuf>,
) -> Result<Vec<TrainSample<P>>> {
    match (data, poses) {
        (Some(dir), Some(pf)) => {
            let manifest = ingest::<P>(dir, pf)?;
            load_samples(&manifest, rc.resolution)
        }
        (None, None) => {
            println!(
                "no dataset supplied; rendering {} synthetic views",
                rc.dataset_size
            );
            Ok(make_synthetic_dataset(
                gen,
                rc.dataset_size,
                rc.resolution,
                intr,
                sc,
                &rc.train,
            ))
        }
        _ => Err(Error::InvalidArgument(
            "--data and --poses must be given together".into(),
        )),
    }
}

/// Camera of an image, looked up by file name in a pose file.
fn pose_for_image(poses: &Path, image: &Path) -> Result<Pose<P>> {
    let name = image
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad image path {}", image.display())))?;
    let text = std::fs::read_to_string(poses)?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.split_whitespace().next() == Some(name) {
            let (_, pose, _, _) = parse_pose_line::<P>(line, lineno + 1)?;
            return Ok(pose);
        }
    }
    Err(Error::InvalidArgument(format!(
        "pose file {} has no record for '{}'",
        poses.display(),
        name
    )))
}

/// Pose records from a file, keeping names as labels. Images named in the
/// file are not required to exist; only the numbers matter here.
fn labeled_poses(path: &Path) -> Result<Vec<(String, Pose<P>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, pose, _, _) = parse_pose_line::<P>(line, lineno + 1)?;
        out.push((name.trim_end_matches(".png").to_string(), pose));
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("{} holds no poses", path.display())));
    }
    Ok(out)
}

fn mask_to_image(mask: &Tensor<P>) -> Tensor<P> {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    Tensor::from_fn(&[3, h, w], |k| mask.data()[k % (h * w)] * 2.0 - 1.0)
}

fn summarize(history: &[f64], what: &str) {
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("{}: {} iterations, loss {:.6} -> {:.6}", what, history.len(), first, last);
    }
}

fn cmd_train_encoder(
    map: &ConfigMap,
    seed: u64,
    data: &Option<PathBuf>,
    poses: &Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let rc = runtime_config(map, seed)?;
    let gen = Generator::<P>::new(rc.gen, seed);
    let intr = camera(&rc);
    let sc = SamplingConfig::from_generator(&gen.cfg);
    let samples = dataset(&rc, &gen, &intr, &sc, data, poses)?;
    let (perc, ident) = metric_nets(seed);
    let run = train_encoder(
        &gen,
        &samples,
        rc.enc,
        &rc.train,
        &LossWeights::default(),
        &perc,
        &ident,
        &intr,
        &sc,
    )?;
    summarize(&run.history, "encoder");
    let mut ck = Checkpoint::<P>::new(seed, run.history.len() as u64, map.to_text());
    ck.insert_params(&gen.params)?;
    ck.insert_params(&run.encoder.params)?;
    ck.save(out)?;
    println!("saved {}", out.display());
    Ok(())
}

fn cmd_train_svinet(
    map: &ConfigMap,
    seed: u64,
    init: &Path,
    data: &Option<PathBuf>,
    poses: &Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let ck = Checkpoint::<P>::load(init)?;
    // Architecture comes from the checkpoint; training keys may be overridden.
    let mut merged = ConfigMap::parse(&ck.config)?;
    for line in map.to_text().lines() {
        if let Some((k, v)) = line.split_once('=') {
            merged.set(k, v);
        }
    }
    let rc = runtime_config(&merged, seed)?;
    let mut gen = Generator::<P>::new(rc.gen, 0);
    gen.params = ck.extract_params("g.", &gen.params)?;
    let mut enc = Encoder::<P>::new(rc.enc, 0);
    enc.params = ck.extract_params("e.", &enc.params)?;
    let intr = camera(&rc);
    let sc = SamplingConfig::from_generator(&gen.cfg);
    let wcfg = WarpConfig::for_far(gen.cfg.far());
    let samples = dataset(&rc, &gen, &intr, &sc, data, poses)?;
    let (perc, ident) = metric_nets(seed);
    let run = train_inpaint(
        &gen,
        &enc,
        &samples,
        rc.net,
        &rc.train,
        &LossWeights::default(),
        &perc,
        &ident,
        &intr,
        &sc,
        &wcfg,
    )?;
    let totals: Vec<f64> = run.history.iter().map(|s| s.total).collect();
    summarize(&totals, "inpainting");
    let mut ck_out = Checkpoint::<P>::new(seed, run.history.len() as u64, merged.to_text());
    ck_out.insert_params(&gen.params)?;
    ck_out.insert_params(&enc.params)?;
    ck_out.insert_params(&run.net.params)?;
    ck_out.insert_params(&run.discriminator.params)?;
    ck_out.save(out)?;
    println!("saved {}", out.display());
    Ok(())
}

fn load_pipeline(model: &Path) -> Result<(Pipeline<P>, RuntimeConfig, u64)> {
    let ck = Checkpoint::<P>::load(model)?;
    let seed = ck.seed;
    let (pipe, rc) = pipeline_from_checkpoint(&ck)?;
    Ok((pipe, rc, seed))
}

fn cmd_synthesize(
    model: &Path,
    image: &Path,
    poses: &Path,
    targets: &Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let (pipe, _rc, _seed) = load_pipeline(model)?;
    let img = load_image::<P>(image)?;
    let pose = pose_for_image(poses, image)?;
    let views = match targets {
        Some(path) => labeled_poses(path)?,
        None => default_novel_poses(pipe.generator.cfg.orbit_radius),
    };
    std::fs::create_dir_all(out)?;
    let grid = synthesize_grid(&pipe, &img, &pose, &views)?;
    for (label, view) in &grid.views {
        save_image(&out.join(format!("{}.png", label)), view)?;
    }
    save_image(&out.join("grid.png"), &grid.grid)?;
    println!("wrote {} views and grid.png to {}", grid.views.len(), out.display());
    Ok(())
}

fn cmd_edit(
    map: &ConfigMap,
    seed: u64,
    model: &Path,
    image: &Path,
    poses: &Path,
    direction: &Path,
    alpha: f64,
    out: &Path,
) -> Result<()> {
    let ck = Checkpoint::<P>::load(model)?;
    let mut merged = ConfigMap::parse(&ck.config)?;
    for line in map.to_text().lines() {
        if let Some((k, v)) = line.split_once('=') {
            merged.set(k, v);
        }
    }
    let (pipe, _) = pipeline_from_checkpoint(&ck)?;
    let rc = runtime_config(&merged, seed)?;
    let img = load_image::<P>(image)?;
    let pose = pose_for_image(poses, image)?;
    let gen = &pipe.generator;

    let text = std::fs::read_to_string(direction)?;
    let vals: Vec<P> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad direction float '{}'", t))))
        .collect::<Result<_>>()?;
    let (l, d) = (gen.cfg.latent_layers, gen.cfg.latent_dim);
    if vals.len() != l * d {
        return Err(Error::InvalidArgument(format!(
            "direction holds {} floats, the latent space needs {}",
            vals.len(),
            l * d
        )));
    }
    let dir = EditDirection::new(Tensor::new(vec![l, d], vals), alpha)?;

    println!("inverting ({} steps)...", rc.opt.inversion_steps);
    let inv = invert(gen, &img, &pose, &pipe.intrinsics, &pipe.sampling, &rc.opt)?;
    println!("  mse {:.6} -> {:.6}", inv.initial_mse, inv.final_mse);
    let views = multiview_set(&pipe, &img, &pose, rc.opt.n_views, &rc.opt)?;
    println!("tuning against {} pseudo views ({} steps)...", views.len(), rc.opt.tuning_steps);
    let (perc, _) = metric_nets(seed);
    let tuned = pivotal_tune(
        gen,
        &inv.latent,
        &inv.noise,
        &img,
        &pose,
        &views,
        &pipe.intrinsics,
        &pipe.sampling,
        &rc.opt,
        &perc,
    )?;
    summarize(&tuned.history, "tuning");

    std::fs::create_dir_all(out)?;
    let recon = tuned
        .generator
        .render_view(&inv.latent, &inv.noise, &pipe.intrinsics, &pose, rc.resolution, &pipe.sampling)
        .color;
    save_image(&out.join("recon.png"), &recon)?;
    for (label, target) in default_novel_poses::<P>(gen.cfg.orbit_radius) {
        let edited = warpsynth::editing::edit(
            &tuned.generator,
            &inv.latent,
            &inv.noise,
            &dir,
            &target,
            &pipe.intrinsics,
            rc.resolution,
            &pipe.sampling,
        );
        save_image(&out.join(format!("edit_{}.png", label)), &edited)?;
    }
    println!("wrote recon.png and 5 edited views to {}", out.display());
    Ok(())
}

fn cmd_warp(model: &Path, image: &Path, poses: &Path, target: &Path, out: &Path) -> Result<()> {
    let (pipe, rc, _) = load_pipeline(model)?;
    let img = load_image::<P>(image)?;
    let pose = pose_for_image(poses, image)?;
    let (label, tpose) = labeled_poses(target)?.swap_remove(0);
    let code = pipe.encoder.encode(&img)?;
    let noise = warpsynth::generator::NoiseInput::zeros(pipe.generator.cfg.plane_resolution);
    let depth = pipe
        .generator
        .render_view(&code, &noise, &pipe.intrinsics, &pose, rc.resolution, &pipe.sampling)
        .depth;
    let rel = warpsynth::geometry::relative_pose(&pose, &tpose);
    let warped = forward_warp(&img, &depth, &rel, &pipe.intrinsics, &pipe.warp)?;
    std::fs::create_dir_all(out)?;
    save_image(&out.join("warped.png"), &warped.image)?;
    save_image(&out.join("mask.png"), &mask_to_image(warped.mask.data()))?;
    let holes = warped.mask.data().data().iter().filter(|&&v| v != 0.0).count();
    let total = rc.resolution * rc.resolution;
    println!(
        "warped to '{}': {}/{} pixels are holes ({:.1}%)",
        label,
        holes,
        total,
        100.0 * holes as f64 / total as f64
    );
    Ok(())
}

fn cmd_eval(model: &Path, data: &Path, poses: &Path, out: &Path) -> Result<()> {
    let (pipe, rc, seed) = load_pipeline(model)?;
    let manifest = ingest::<P>(data, poses)?;
    let mut records = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let image = load_image::<P>(&e.path)?;
        if image.shape() != [3, rc.resolution, rc.resolution] {
            return Err(Error::InvalidArgument(format!(
                "image '{}' has shape {:?}, the model runs at {}",
                e.name,
                image.shape(),
                rc.resolution
            )));
        }
        records.push(EvalRecord { name: e.name.clone(), image, pose: e.pose, tag: e.tag.clone() });
    }
    let (_, ident) = metric_nets(seed);
    let outputs = evaluate(&pipe, &records, &ident, seed)?;
    let text = format!("{}", outputs.report);
    std::fs::write(out, &text)?;
    print!("{}", text);
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_make_dataset(map: &ConfigMap, seed: u64, out: &Path, count: Option<usize>) -> Result<()> {
    let rc = runtime_config(map, seed)?;
    let gen = Generator::<P>::new(rc.gen, seed);
    let intr = camera(&rc);
    let sc = SamplingConfig::from_generator(&gen.cfg);
    let n = count.unwrap_or(rc.dataset_size);
    let samples = make_synthetic_dataset(&gen, n, rc.resolution, &intr, &sc, &rc.train);
    std::fs::create_dir_all(out)?;
    let mut pose_lines = String::from("# image, camera-to-world 4x4 row-major, intrinsics 3x3 row-major, tag\n");
    for (i, s) in samples.iter().enumerate() {
        let name = format!("img_{:03}.png", i);
        save_image(&out.join(&name), &s.image)?;
        pose_lines.push_str(&format_pose_line(&name, &s.pose, &intr, "train"));
        pose_lines.push('\n');
    }
    std::fs::write(out.join("poses.txt"), pose_lines)?;
    println!("wrote {} images and poses.txt to {}", n, out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let map = load_config(cli)?;
    match &cli.cmd {
        Cmd::TrainEncoder { data, poses, out } => {
            cmd_train_encoder(&map, cli.seed, data, poses, out)
        }
        Cmd::TrainSvinet { init, data, poses, out } => {
            cmd_train_svinet(&map, cli.seed, init, data, poses, out)
        }
        Cmd::Synthesize { model, image, poses, targets, out } => {
            cmd_synthesize(model, image, poses, targets, out)
        }
        Cmd::Edit { model, image, poses, direction, alpha, out } => {
            cmd_edit(&map, cli.seed, model, image, poses, direction, *alpha, out)
        }
        Cmd::Warp { model, image, poses, target, out } => {
            cmd_warp(model, image, poses, target, out)
        }
        Cmd::Eval { model, data, poses, out } => cmd_eval(model, data, poses, out),
        Cmd::Selfcheck { demod_eps } => {
            let outcomes = selfcheck(*demod_eps);
            let (text, all) = selfcheck_report(&outcomes);
            print!("{}", text);
            if !all {
                std::process::exit(1);
            }
            Ok(())
        }
        Cmd::MakeDataset { out, count } => cmd_make_dataset(&map, cli.seed, out, *count),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {}", e);
        std::process::exit(1);
    }
}

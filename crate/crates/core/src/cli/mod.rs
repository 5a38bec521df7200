//! Command-line workflows: dataset rendering, autoencoder and flow training,
//! single-view generation, scene composition and mesh evaluation.
//!
//! Every subcommand resolves a [`RunConfig`] from defaults, an optional flat
//! JSON file (`--config`), `--set key=value` pairs and dedicated flags, in
//! that order. The effective configuration is validated before any work and
//! written to `<out>/config.json`. Exit status is 0 on success, 2 for
//! argument or configuration errors and 1 for runtime failures.

mod config;

pub use config::{parse_value, read_overrides, DatasetSection, GenerateSection, RunConfig};

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::data::{
    build_dataset, load_sample, standard_library, CanonicalShape, DatasetManifest, PoseSampler,
};
use crate::error::{Error, Result};
use crate::flow::{train_flow, FlowModel};
use crate::geometry::CameraIntrinsics;
use crate::io;
use crate::metrics::evaluate_meshes;
use crate::nn::TrainRecord;
use crate::pipeline::{compose_scene, flow_example, generate_posed_object, read_scene_bundle, write_scene_output};
use crate::vae::{train_vae, Vae};

#[derive(Debug, Parser)]
#[command(name = "posegen", version, about = "Camera-frame 3D shape generation from a depth view")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat JSON file of dotted configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Configuration override, repeatable: `--set sampler.steps=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value = "info")]
    pub log_level: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a training dataset from the shape library.
    Dataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        shapes: Option<usize>,
        #[arg(long)]
        views: Option<usize>,
        /// 1: clean renders, 2: corrupted conditions.
        #[arg(long)]
        stage: Option<u8>,
    },
    /// Train the shape autoencoder.
    TrainVae {
        #[command(flatten)]
        common: Common,
        /// Dataset whose shapes to train on (default: the shape library).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Train the flow model on a dataset with a trained autoencoder.
    TrainFlow {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Autoencoder checkpoint directory.
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Generate a camera-frame mesh from one view.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `train-flow` (holds `vae/` and `flow/`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory with image.png, depth.pfm, intrinsics.json and an
        /// optional mask.png.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        cfg_strength: Option<f64>,
    },
    /// Generate every masked object of a scene and compose them.
    Compose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory with image.png, depth.pfm, intrinsics.json and masks/<i>.png.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Compare a generated mesh with a reference mesh.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gen: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Optional PLY point cloud for the one-sided anchor distance.
        #[arg(long)]
        anchor: Option<PathBuf>,
    },
}

/// A failure with its exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => CliError::Usage(e.to_string()),
            e => CliError::Runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn missing(key: &str) -> CliError {
    CliError::Usage(format!("missing required argument `--{key}`"))
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit status.
pub fn execute<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let common = match &cli.command {
        Command::Dataset { common, .. }
        | Command::TrainVae { common, .. }
        | Command::TrainFlow { common, .. }
        | Command::Generate { common, .. }
        | Command::Compose { common, .. }
        | Command::Eval { common, .. } => common,
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&common.log_level)
        .format_timestamp(None)
        .try_init();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Usage("`--threads` must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Runtime(Error::InvalidInput(e.to_string())))?;
    pool.install(|| dispatch(&cli.command))
}

/// Resolves the configuration: defaults, then the file, then `--set`, then
/// dedicated flags.
fn resolve(common: &Common, flags: Vec<(&str, Value)>) -> CliResult<(RunConfig, PathBuf)> {
    let out = common.out.clone().ok_or_else(|| missing("out"))?;
    let mut overrides: Vec<(String, Value)> = Vec::new();
    if let Some(p) = &common.config {
        overrides.extend(read_overrides(p).map_err(|e| CliError::Usage(format!("--config: {e}")))?);
    }
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("`--set {s}`: expected KEY=VALUE")))?;
        overrides.push((k.trim().to_string(), parse_value(v.trim())));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), Value::from(seed)));
    }
    overrides.extend(flags.into_iter().map(|(k, v)| (k.to_string(), v)));
    let mut cfg = RunConfig::default().with_overrides(overrides.iter().map(|(k, v)| (k.as_str(), v.clone())))?;
    cfg.propagate_seed();
    cfg.validate()?;
    Ok((cfg, out))
}

fn flag<T: Into<Value>>(key: &'static str, v: Option<T>) -> Option<(&'static str, Value)> {
    v.map(|v| (key, v.into()))
}

fn dispatch(cmd: &Command) -> CliResult<()> {
    match cmd {
        Command::Dataset {
            common,
            shapes,
            views,
            stage,
        } => {
            let flags = [
                flag("dataset.shapes", *shapes),
                flag("dataset.views_per_shape", *views),
                flag("dataset.stage", *stage),
            ];
            let (cfg, out) = resolve(common, flags.into_iter().flatten().collect())?;
            dataset(&cfg, &out)
        }
        Command::TrainVae { common, dataset, steps } => {
            let flags = steps
                .map(|s| vec![("vae_train.steps", Value::from(s)), ("vae_train.optim.total_steps", Value::from(s))])
                .unwrap_or_default();
            let (cfg, out) = resolve(common, flags)?;
            train_vae_cmd(&cfg, &out, dataset.as_deref())
        }
        Command::TrainFlow {
            common,
            dataset,
            vae,
            steps,
        } => {
            let flags = steps
                .map(|s| vec![("flow_train.steps", Value::from(s)), ("flow_train.optim.total_steps", Value::from(s))])
                .unwrap_or_default();
            let (cfg, out) = resolve(common, flags)?;
            let dataset = dataset.as_deref().ok_or_else(|| missing("dataset"))?;
            let vae = vae.as_deref().ok_or_else(|| missing("vae"))?;
            train_flow_cmd(cfg, &out, dataset, vae)
        }
        Command::Generate {
            common,
            checkpoint,
            input,
            steps,
            cfg_strength,
        } => {
            let flags = [flag("sampler.steps", *steps), flag("sampler.cfg_strength", *cfg_strength)];
            let (cfg, out) = resolve(common, flags.into_iter().flatten().collect())?;
            let checkpoint = checkpoint.as_deref().ok_or_else(|| missing("checkpoint"))?;
            let input = input.as_deref().ok_or_else(|| missing("input"))?;
            generate_cmd(&cfg, &out, checkpoint, input)
        }
        Command::Compose {
            common,
            checkpoint,
            scene,
        } => {
            let (cfg, out) = resolve(common, Vec::new())?;
            let checkpoint = checkpoint.as_deref().ok_or_else(|| missing("checkpoint"))?;
            let scene = scene.as_deref().ok_or_else(|| missing("scene"))?;
            compose_cmd(&cfg, &out, checkpoint, scene)
        }
        Command::Eval { common, gen, gt, anchor } => {
            let (cfg, out) = resolve(common, Vec::new())?;
            let gen = gen.as_deref().ok_or_else(|| missing("gen"))?;
            let gt = gt.as_deref().ok_or_else(|| missing("gt"))?;
            eval_cmd(&cfg, &out, gen, gt, anchor.as_deref())
        }
    }
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::from(e).at(out))?;
    cfg.write(&out.join("config.json"))?;
    let mut echo = String::new();
    for (k, v) in cfg.flatten() {
        echo.push_str(&format!("  {k} = {v}\n"));
    }
    log::info!("effective configuration:\n{echo}");
    Ok(())
}

/// CSV training log writer.
struct MetricsLog {
    file: fs::File,
}

impl MetricsLog {
    fn create(path: &Path) -> Result<Self> {
        let mut file = fs::File::create(path).map_err(|e| Error::from(e).at(path))?;
        writeln!(file, "{}", TrainRecord::CSV_HEADER)?;
        Ok(MetricsLog { file })
    }

    fn log(&mut self, what: &str, r: &TrainRecord) {
        log::info!("{what} step {} loss {:.4e} grad_norm {:.3e} lr {:.3e}", r.step, r.loss, r.grad_norm, r.lr);
        // A failed log line must not abort training; the checkpoint is the artifact.
        if let Err(e) = writeln!(self.file, "{}", r.csv_line()) {
            log::warn!("metrics log: {e}");
        }
    }
}

fn dataset(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    prepare_out(cfg, out)?;
    let shapes = standard_library(cfg.dataset.shapes)?;
    let manifest = build_dataset(&shapes, &cfg.dataset.config, out, cfg.seed)?;
    log::info!("wrote {} samples to {}", manifest.samples.len(), out.display());
    Ok(())
}

/// Canonical shapes referenced by a dataset, in first-seen order.
pub fn dataset_shapes(manifest: &DatasetManifest) -> Result<Vec<Arc<CanonicalShape>>> {
    let mut seen = BTreeMap::new();
    let mut shapes = Vec::new();
    for s in &manifest.samples {
        if seen.insert(s.pose.shape_id.clone(), ()).is_none() {
            shapes.push(Arc::new(CanonicalShape::new(s.pose.shape_id.clone(), s.pose.shape.clone())?));
        }
    }
    if shapes.is_empty() {
        return Err(Error::Empty("dataset samples"));
    }
    Ok(shapes)
}

fn train_vae_cmd(cfg: &RunConfig, out: &Path, dataset: Option<&Path>) -> CliResult<()> {
    let shapes = match dataset {
        Some(d) => dataset_shapes(&DatasetManifest::read(d).map_err(|e| e.at(d))?)?,
        None => standard_library(cfg.dataset.shapes)?,
    };
    prepare_out(cfg, out)?;
    let sampler = PoseSampler::new(shapes, cfg.poses.clone())?;
    let mut vae = Vae::<f32>::new(cfg.vae.clone(), cfg.seed)?;
    let t = &cfg.vae_train;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut log = MetricsLog::create(&out.join("metrics.csv"))?;
    let points = vae.config.points;
    train_vae(
        &mut vae,
        t,
        |_, _| sampler.vae_example(points, t.queries, t.near_fraction, t.near_sigma, &mut rng),
        |r| log.log("vae", r),
    )?;
    vae.save(&out.join("vae"), t.steps)?;
    Ok(())
}

fn train_flow_cmd(mut cfg: RunConfig, out: &Path, dataset: &Path, vae_dir: &Path) -> CliResult<()> {
    let (vae, _) = Vae::<f32>::load(vae_dir)?;
    cfg.flow = cfg.flow.clone().for_vae(&vae.config);
    cfg.vae = vae.config.clone();
    cfg.validate()?;
    let manifest = DatasetManifest::read(dataset).map_err(|e| e.at(dataset))?;
    manifest.verify(dataset)?;
    if manifest.samples.is_empty() {
        return Err(Error::Empty("dataset samples").into());
    }
    prepare_out(&cfg, out)?;
    let mut flow = FlowModel::<f32>::new(cfg.flow.clone(), cfg.seed)?;
    let examples = manifest
        .samples
        .iter()
        .map(|r| flow_example(&load_sample(dataset, r)?, &vae, &flow, r.seed))
        .collect::<Result<Vec<_>>>()?;
    log::info!("encoded {} training examples", examples.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut log = MetricsLog::create(&out.join("metrics.csv"))?;
    train_flow(
        &mut flow,
        &cfg.flow_train,
        |_, _| Ok(examples[rng.random_range(0..examples.len())].clone()),
        |r| log.log("flow", r),
    )?;
    flow.save(&out.join("flow"), cfg.flow_train.steps)?;
    vae.save(&out.join("vae"), 0)?;
    Ok(())
}

fn load_models(checkpoint: &Path) -> Result<(Vae<f32>, FlowModel<f32>)> {
    let (vae, _) = Vae::<f32>::load(&checkpoint.join("vae"))?;
    let (flow, _) = FlowModel::<f32>::load(&checkpoint.join("flow"))?;
    flow.config.check_vae(&vae.config)?;
    Ok((vae, flow))
}

fn generate_cmd(cfg: &RunConfig, out: &Path, checkpoint: &Path, input: &Path) -> CliResult<()> {
    let (vae, flow) = load_models(checkpoint)?;
    let image = io::read_png(input.join("image.png"))?;
    let depth = io::read_pfm(input.join("depth.pfm"))?;
    let k: CameraIntrinsics = io::read_json(input.join("intrinsics.json"))?;
    let mask_path = input.join("mask.png");
    let mask = if mask_path.is_file() { Some(io::read_mask(&mask_path)?) } else { None };
    prepare_out(cfg, out)?;
    let g = generate_posed_object(&image, &depth, &k, mask.as_ref(), &vae, &flow, &cfg.generation())?;
    io::write_obj(out.join("mesh.obj"), &g.mesh)?;
    io::write_obj(out.join("normalized.obj"), &g.normalized_mesh)?;
    io::write_json(out.join("frame.json"), &g.frame)?;
    io::write_ply(out.join("partial.ply"), &g.partial)?;
    log::info!("generated {} vertices, {} faces", g.mesh.vertices.len(), g.mesh.faces.len());
    Ok(())
}

fn compose_cmd(cfg: &RunConfig, out: &Path, checkpoint: &Path, scene: &Path) -> CliResult<()> {
    let (vae, flow) = load_models(checkpoint)?;
    let bundle = read_scene_bundle(scene)?;
    prepare_out(cfg, out)?;
    let comp = compose_scene(&bundle, &vae, &flow, &cfg.generation())?;
    write_scene_output(out, &comp.layout)?;
    let failures: Vec<Value> = comp
        .failures
        .iter()
        .map(|(i, m)| serde_json::json!({ "mask": i, "error": m }))
        .collect();
    io::write_json(out.join("failures.json"), &failures)?;
    for (i, m) in &comp.failures {
        log::warn!("object {i} failed: {m}");
    }
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, out: &Path, gen: &Path, gt: &Path, anchor: Option<&Path>) -> CliResult<()> {
    let gen = io::read_obj(gen)?;
    let gt = io::read_obj(gt)?;
    let anchor = anchor.map(io::read_ply).transpose()?;
    prepare_out(cfg, out)?;
    let report = evaluate_meshes(&gen, &gt, anchor.as_ref().map(|a| a.points.as_slice()), &cfg.metrics)?;
    io::write_json(out.join("report.json"), &report)?;
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::TriangleMesh;

    fn argv(args: &[&str]) -> Vec<String> {
        std::iter::once("posegen").chain(args.iter().copied()).map(String::from).collect()
    }

    #[test]
    fn usage_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let out = out.to_str().unwrap();
        assert_eq!(execute(argv(&["generate", "--out", out])), 2);
        assert_eq!(execute(argv(&["frobnicate"])), 2);
        assert_eq!(execute(argv(&["dataset", "--out", out, "--set", "dataset.bogus=1"])), 2);
        assert_eq!(execute(argv(&["dataset", "--out", out, "--stage", "3"])), 2);
        assert_eq!(execute(argv(&["eval", "--gen", "a.obj", "--gt", "b.obj"])), 2);
    }

    #[test]
    fn runtime_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let missing = dir.path().join("missing.obj");
        let m = missing.to_str().unwrap();
        assert_eq!(execute(argv(&["eval", "--out", out.to_str().unwrap(), "--gen", m, "--gt", m])), 1);
    }

    #[test]
    fn eval_identical_meshes() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0].into(),
                [1.0, 0.0, 0.0].into(),
                [0.0, 1.0, 0.0].into(),
                [0.0, 0.0, 1.0].into(),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap();
        let a = dir.path().join("a.obj");
        io::write_obj(&a, &mesh).unwrap();
        let out = dir.path().join("report");
        let code = execute(argv(&[
            "eval",
            "--out",
            out.to_str().unwrap(),
            "--gen",
            a.to_str().unwrap(),
            "--gt",
            a.to_str().unwrap(),
            "--set",
            "metrics.samples=500",
        ]));
        assert_eq!(code, 0);
        let r: crate::metrics::MetricReport = io::read_json(out.join("report.json")).unwrap();
        assert_eq!((r.cd, r.f_score, r.iou_b), (0.0, 1.0, 1.0));
        let cfg: BTreeMap<String, Value> = io::read_json(out.join("config.json")).unwrap();
        assert_eq!(cfg["metrics.samples"], Value::from(500));
    }
}

//! Command-line driver. Settings resolve as flags, then `--config` JSON,
//! then built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use burstkit_tensor::io::read_tensor;
use burstkit_tensor::par::THREADS_ENV;
use burstkit_tensor::Tensor;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dump::{dump_features, rgb_preview, save_png};
use crate::error::{bail, Error, Result};
use crate::model::Ablation;
use crate::synth::dataset::{read_json, write_json, Dataset, DatasetConfig, SampleMeta, META};
use crate::synth::{forward_isp, write_dataset, NoiseMode};
use crate::train::eval::{evaluate, Predictor, DEFAULT_BORDER};
use crate::train::trainer::{load_model, train, Precision, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "burstkit", version, about = "Synthetic RAW bursts, training and evaluation")]
pub struct Cli {
    /// Kernel threads; 1 gives bit-reproducible runs. Overrides BURSTKIT_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic burst dataset.
    Generate(GenerateArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Score a checkpoint (or a reference predictor) on a dataset.
    Eval(EvalArgs),
    /// Restore one burst to a PNG.
    Infer(InferArgs),
    /// Write intermediate feature maps for one burst.
    DumpFeatures(DumpArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseArg {
    TrainRange,
    Gain1,
    Gain2,
    Gain4,
    Gain8,
}

impl From<NoiseArg> for NoiseMode {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::TrainRange => NoiseMode::TrainRange,
            NoiseArg::Gain1 => NoiseMode::Gain1,
            NoiseArg::Gain2 => NoiseMode::Gain2,
            NoiseArg::Gain4 => NoiseMode::Gain4,
            NoiseArg::Gain8 => NoiseMode::Gain8,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON dataset config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub burst_size: Option<usize>,
    #[arg(long)]
    pub scale: Option<usize>,
    /// Packed frame side.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long, value_enum)]
    pub noise: Option<NoiseArg>,
    /// Translation bound in mosaic pixels.
    #[arg(long)]
    pub max_translation: Option<f64>,
    #[arg(long)]
    pub max_rotation: Option<f64>,
    /// Source PNGs (repeatable); procedural scenes when omitted.
    #[arg(long = "source")]
    pub sources: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    /// Seeds both initialization and sample order.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub offset_groups: Option<usize>,
    /// full, no-mkga, no-afe, mean-fusion, no-alignment or pixel-shuffle.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Continue from the checkpoint in `--out` if there is one.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum PredictorArg {
    Model,
    Bilinear,
    GroundTruth,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Required for `--predictor model`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PredictorArg::Model)]
    pub predictor: PredictorArg,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BORDER)]
    pub border: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A dataset sample directory or a packed `(B, 4, h, w)` `.bkt` file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the linear prediction as `.bkt`.
    #[arg(long)]
    pub raw_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A dataset sample directory or a packed `.bkt` file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn load_config<C: for<'de> serde::Deserialize<'de> + Default>(path: Option<&Path>) -> Result<C> {
    match path {
        Some(p) => read_json(p).map_err(|e| match e {
            Error::Format { path, msg } => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        }),
        None => Ok(C::default()),
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut cfg: DatasetConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.burst_size {
        cfg.burst_size = v;
    }
    if let Some(v) = a.scale {
        cfg.scale = v;
    }
    if let Some(v) = a.patch {
        cfg.patch = v;
    }
    if let Some(v) = a.noise {
        cfg.noise = v.into();
    }
    if let Some(v) = a.max_translation {
        cfg.max_translation = v;
    }
    if let Some(v) = a.max_rotation {
        cfg.max_rotation_deg = v;
    }
    if !a.sources.is_empty() {
        cfg.sources = a.sources;
    }
    write_dataset(&cfg, a.count, a.seed, &a.out)?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let dataset = Dataset::open(&a.data)?;
    let mut cfg: TrainConfig = load_config(a.config.as_deref())?;
    cfg.model.scale = dataset.manifest.config.scale;
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.min_lr {
        cfg.min_lr = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
        cfg.model.init_seed = v;
    }
    if let Some(v) = a.channels {
        cfg.model.channels = v;
    }
    if let Some(v) = a.levels {
        cfg.model.levels = v;
    }
    if let Some(v) = a.heads {
        cfg.model.heads = v;
    }
    if let Some(v) = a.offset_groups {
        cfg.model.offset_groups = v;
    }
    if let Some(name) = &a.ablation {
        cfg.model.ablation = Ablation::preset(name)?;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = a.clip_norm {
        cfg.clip_norm = Some(v);
    }
    if a.no_clip {
        cfg.clip_norm = None;
    }
    if let Some(p) = a.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    let summary = train(&cfg, &dataset, &a.out, a.resume)?;
    log::info!(
        "trained {} steps; loss {:?} -> {:?}",
        summary.steps,
        summary.first_loss,
        summary.last_loss
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let dataset = Dataset::open(&a.data)?;
    let report = if a.predictor == PredictorArg::Model {
        let Some(ckpt) = &a.checkpoint else {
            bail!(Config, "--checkpoint is required with --predictor model");
        };
        let (net, params, manifest) = load_model(ckpt)?;
        let mut r = evaluate(&Predictor::Model { net: &net, params: &params }, &dataset, a.border)?;
        r.config_hash = manifest.config_hash;
        r.train_steps = Some(manifest.step);
        r
    } else {
        let predictor = match a.predictor {
            PredictorArg::Bilinear => Predictor::Bilinear,
            _ => Predictor::GroundTruth,
        };
        evaluate(&predictor, &dataset, a.border)?
    };
    let mut json = report.to_json();
    json.push('\n');
    match &a.out {
        Some(path) => fs::write(path, json).map_err(|e| Error::io(path, e))?,
        None => print!("{json}"),
    }
    Ok(())
}

/// Packed frames and, for sample directories, their metadata.
fn load_burst(input: &Path) -> Result<(Tensor<f64>, Option<SampleMeta>)> {
    if input.is_dir() {
        let frames_path = input.join(crate::synth::dataset::FRAMES);
        let frames = read_tensor(&frames_path).map_err(|e| Error::format(&frames_path, e))?;
        let meta_path = input.join(META);
        let meta = if meta_path.exists() { Some(read_json(&meta_path)?) } else { None };
        Ok((frames, meta))
    } else if input.exists() {
        Ok((read_tensor(input).map_err(|e| Error::format(input, e))?, None))
    } else {
        Err(Error::io(input, std::io::ErrorKind::NotFound.into()))
    }
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let (net, params, _) = load_model(&a.checkpoint)?;
    let (frames, meta) = load_burst(&a.input)?;
    let linear = net.predict(&params, &frames)?;
    if let Some(raw) = &a.raw_out {
        burstkit_tensor::io::write_tensor(raw, &linear).map_err(|e| Error::format(raw, e))?;
    }
    let png = match meta {
        Some(m) => {
            let srgb = forward_isp(&linear.map(|v| v.clamp(0.0, 1.0)), &m.isp)?;
            let [_, _, h, w] = srgb.shape();
            image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let px = |k| (srgb.at(0, k, y as usize, x as usize) * 255.0).round() as u8;
                image::Rgb([px(0), px(1), px(2)])
            })
        }
        None => rgb_preview(&linear)?,
    };
    save_png(&image::DynamicImage::ImageRgb8(png), &a.out)
}

#[derive(Serialize)]
struct DumpManifest<'a> {
    checkpoint: &'a Path,
    config_hash: String,
    input: &'a Path,
    images: Vec<PathBuf>,
}

fn cmd_dump(a: DumpArgs) -> Result<()> {
    let (net, params, manifest) = load_model(&a.checkpoint)?;
    let (frames, _) = load_burst(&a.input)?;
    let images = dump_features(&net, &params, &frames, &a.out)?;
    let images = images
        .iter()
        .map(|p| p.strip_prefix(&a.out).unwrap_or(p).to_path_buf())
        .collect();
    write_json(
        &a.out.join("manifest.json"),
        &DumpManifest {
            checkpoint: &a.checkpoint,
            config_hash: manifest.config_hash,
            input: &a.input,
            images,
        },
    )
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Infer(a) => cmd_infer(a),
        Command::DumpFeatures(a) => cmd_dump(a),
    }
}

/// Parses arguments, runs, and maps failures to the exit-code contract:
/// 0 ok, 2 usage or config, 3 I/O, 4 numeric.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(t) = cli.threads {
        std::env::set_var(THREADS_ENV, t.to_string());
    }
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

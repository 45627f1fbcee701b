//! Command-line surface: argument parsing, config-file merging and the six
//! subcommands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use crackfpn_core::augment::AugmentConfig;
use crackfpn_core::loss::LossKind;
use crackfpn_core::metrics::evaluate_dataset;
use crackfpn_core::nn::optim::OptimizerKind;
use crackfpn_core::postprocess::{dilate_threshold_extend, PostprocessParams};
use crackfpn_core::preprocess::SplitParams;
use crackfpn_core::tiling::Combine;
use crackfpn_core::train::{CropMode, DatasetPreset, TrainConfig, TrainPreset};
use crackfpn_core::ModelConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::{load_checkpoint, load_encoder_weights};
use crate::dataset::{build_dataset, BuildPlan};
use crate::error::{Error, Result};
use crate::fit::fit;
use crate::io::{list_rasters, load_image, load_mask, save_image, save_mask, write_atomic, DEFAULT_CRACK_THRESHOLD};
use crate::manifest::read_manifest;
use crate::predict::{predict_image, write_prediction, PredictMode};
use crate::report::{read_report, write_chart, write_report};
use crate::synth::{sample_id, synthesize_one, SynthParams};

pub const SEED_ENV: &str = "CRACKFPN_SEED";

#[derive(Debug, Parser)]
#[command(name = "crackfpn", version, about = "Crack segmentation with a feature pyramid network")]
pub struct Cli {
    /// Raise log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores, or 1 for train).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate textured images with dark polyline cracks and exact masks.
    Synthesize(SynthesizeArgs),
    /// Build a resized or tiled training set and its manifest.
    Preprocess(PreprocessArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Segment full-size images with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predicted masks against labels.
    Evaluate(EvaluateArgs),
    /// Extend predicted cracks into adjacent dark pixels.
    Postprocess(PostprocessArgs),
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h = h.trim().parse::<usize>().map_err(|e| format!("height {h:?}: {e}"))?;
    let w = w.trim().parse::<usize>().map_err(|e| format!("width {w:?}: {e}"))?;
    if h == 0 || w == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((h, w))
}

/// `RxC`, or a single value used for both axes.
fn parse_stride(s: &str) -> std::result::Result<(usize, usize), String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("stride must be positive".into()),
        Ok(v) => Ok((v, v)),
        Err(_) => parse_size(s),
    }
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Image size as HxW.
    #[arg(long, value_parser = parse_size, default_value = "960x1280")]
    pub size: (usize, usize),
    /// Chance that an image carries a crack.
    #[arg(long, default_value_t = 1.0)]
    pub crack_prob: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetPresetArg {
    Ts1,
    Ts2,
    Ts3,
    Ts4,
    Custom,
}

impl From<DatasetPresetArg> for DatasetPreset {
    fn from(p: DatasetPresetArg) -> Self {
        match p {
            DatasetPresetArg::Ts1 => Self::Ts1,
            DatasetPresetArg::Ts2 => Self::Ts2,
            DatasetPresetArg::Ts3 => Self::Ts3,
            DatasetPresetArg::Ts4 => Self::Ts4,
            DatasetPresetArg::Custom => Self::Custom,
        }
    }
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub preset: DatasetPresetArg,
    /// Resize target as HxW (custom preset).
    #[arg(long, value_parser = parse_size, conflicts_with = "tile")]
    pub target: Option<(usize, usize)>,
    /// Tile size as HxW (custom preset).
    #[arg(long, value_parser = parse_size)]
    pub tile: Option<(usize, usize)>,
    /// Row and column stride as RxC or a single value (custom preset).
    #[arg(long, value_parser = parse_stride)]
    pub stride: Option<(usize, usize)>,
    /// Number of crack-free tiles to sample (all of them when fewer exist).
    #[arg(long)]
    pub background: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Label gray levels above this are crack.
    #[arg(long)]
    pub crack_threshold: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainPresetArg {
    Model1,
    Model2,
    Model3,
    Model4,
    Custom,
}

impl From<TrainPresetArg> for TrainPreset {
    fn from(p: TrainPresetArg) -> Self {
        match p {
            TrainPresetArg::Model1 => Self::Model1,
            TrainPresetArg::Model2 => Self::Model2,
            TrainPresetArg::Model3 => Self::Model3,
            TrainPresetArg::Model4 => Self::Model4,
            TrainPresetArg::Custom => Self::Custom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    Tiny,
    #[value(name = "se_resnext50_32x4d", alias = "se_resnext50")]
    SeResnext50,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Dice,
    DiceBce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CropArg {
    None,
    Random,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Experiment preset (default: the one matching the manifest).
    #[arg(long, value_enum)]
    pub preset: Option<TrainPresetArg>,
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Smoothing term of the soft Dice loss.
    #[arg(long)]
    pub dice_smooth: Option<f32>,
    #[arg(long, value_enum)]
    pub crop: Option<CropArg>,
    /// Random crop size as HxW.
    #[arg(long, value_parser = parse_size)]
    pub crop_size: Option<(usize, usize)>,
    /// Disable all augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Visit crack samples twice per epoch.
    #[arg(long)]
    pub oversample_crack: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Encoder weight file to start from.
    #[arg(long)]
    pub encoder_weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Tiled,
    ResizeBack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineArg {
    Mean,
    Max,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Inference tile as HxW (tiled mode).
    #[arg(long, value_parser = parse_size)]
    pub tile: Option<(usize, usize)>,
    /// Training resolution as HxW (resize-back mode).
    #[arg(long, value_parser = parse_size)]
    pub train_size: Option<(usize, usize)>,
    /// How overlapping tile probabilities merge.
    #[arg(long, value_enum)]
    pub combine: Option<CombineArg>,
    /// Probabilities above this are crack (default: the model's).
    #[arg(long)]
    pub threshold: Option<f32>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted masks, or a predict output directory holding `mask/`.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// metrics.json files to compare in the chart, in model order.
    #[arg(long, num_args = 1..)]
    pub chart_from: Vec<PathBuf>,
    #[arg(long)]
    pub crack_threshold: Option<u8>,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    /// Predicted masks, or a predict output directory holding `mask/`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// The photos the masks were predicted from.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Only pixels darker than this luminance may be added.
    #[arg(long)]
    pub intensity_threshold: Option<u8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResizeSection {
    target_h: usize,
    target_w: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PredictSection {
    mode: Option<ModeArg>,
    tile_h: Option<usize>,
    tile_w: Option<usize>,
    train_h: Option<usize>,
    train_w: Option<usize>,
    combine: Option<CombineArg>,
    threshold: Option<f32>,
}

/// Contents of `--config`. Sections only apply to their subcommand.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    workers: Option<usize>,
    crack_threshold: Option<u8>,
    /// Partial `TrainConfig`, merged over the preset defaults.
    train: Option<Value>,
    split: Option<SplitParams>,
    resize: Option<ResizeSection>,
    predict: Option<PredictSection>,
    postprocess: Option<PostprocessParams>,
}

fn read_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::input(path, format!("invalid config: {e}")))
}

/// Flag, then config file, then the environment, then 0.
fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn log_resolved(command: &str, resolved: &impl Serialize) {
    log::info!("resolved {command} config: {}", serde_json::to_string(resolved).expect("config serializes"));
}

/// Parses the process arguments and runs the command.
pub fn run(cli: Cli) -> Result<()> {
    let file = read_file_config(cli.config.as_deref())?;
    let default_workers = match cli.command {
        Command::Train(_) => 1,
        _ => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let workers = cli.workers.or(file.workers).unwrap_or(default_workers);
    if workers == 0 {
        return Err(Error::Usage("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {workers} workers: {e}")))?;
    log::info!("using {workers} worker thread(s)");
    pool.install(|| match cli.command {
        Command::Synthesize(a) => synthesize_cmd(a, &file),
        Command::Preprocess(a) => preprocess_cmd(a, &file),
        Command::Train(a) => train_cmd(a, &file),
        Command::Predict(a) => predict_cmd(a, &file),
        Command::Evaluate(a) => evaluate_cmd(a, &file),
        Command::Postprocess(a) => postprocess_cmd(a, &file),
    })
}

#[derive(Serialize)]
struct ResolvedSynthesize<'a> {
    out: &'a Path,
    count: usize,
    height: usize,
    width: usize,
    crack_prob: f64,
    seed: u64,
}

fn synthesize_cmd(a: SynthesizeArgs, file: &FileConfig) -> Result<()> {
    if !(0.0..=1.0).contains(&a.crack_prob) {
        return Err(Error::Usage(format!("--crack-prob {} outside [0, 1]", a.crack_prob)));
    }
    let seed = resolve_seed(a.seed, file.seed)?;
    let (height, width) = a.size;
    log_resolved(
        "synthesize",
        &ResolvedSynthesize { out: &a.out, count: a.count, height, width, crack_prob: a.crack_prob, seed },
    );
    let params = SynthParams { height, width, crack_prob: a.crack_prob, ..SynthParams::default() };
    (0..a.count).into_par_iter().try_for_each(|i| -> Result<()> {
        let (img, mask) = synthesize_one(&params, seed, i);
        let id = sample_id(i);
        save_image(&img, &a.out.join("images").join(format!("{id}.png")))?;
        save_mask(&mask, &a.out.join("labels").join(format!("{id}.png")))
    })?;
    println!("wrote {} image/label pairs to {}", a.count, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ResolvedPreprocess<'a> {
    images: &'a Path,
    labels: &'a Path,
    out: &'a Path,
    preset: DatasetPreset,
    mode: &'static str,
    target: Option<(usize, usize)>,
    split: Option<SplitParams>,
    seed: u64,
    crack_threshold: u8,
}

fn preprocess_plan(a: &PreprocessArgs, file: &FileConfig, seed: u64) -> Result<BuildPlan> {
    let preset = DatasetPreset::from(a.preset);
    let geometry_flags = a.target.is_some() || a.tile.is_some() || a.stride.is_some();
    if let Some(mut plan) = BuildPlan::for_preset(preset, seed) {
        if geometry_flags || file.resize.is_some() || file.split.is_some() {
            return Err(Error::Usage(format!(
                "preset {:?} fixes the geometry; use --preset custom to change it",
                a.preset
            )));
        }
        if let Some(n) = a.background {
            match &mut plan {
                BuildPlan::Split { params } if preset == DatasetPreset::Ts4 => params.background_sample = n,
                _ => return Err(Error::Usage(format!("preset {:?} takes no background tiles", a.preset))),
            }
        }
        return Ok(plan);
    }
    if let Some((target_h, target_w)) = a.target.or(file.resize.map(|r| (r.target_h, r.target_w))) {
        if a.tile.is_some() || a.stride.is_some() || a.background.is_some() {
            return Err(Error::Usage("--target cannot be combined with split options".into()));
        }
        return Ok(BuildPlan::Resize { target_h, target_w });
    }
    let base = file.split.unwrap_or_default();
    let (tile_h, tile_w) = a.tile.unwrap_or((base.tile_h, base.tile_w));
    let (stride_r, stride_c) = a.stride.unwrap_or(if file.split.is_some() || a.tile.is_none() {
        (base.stride_r, base.stride_c)
    } else {
        (base.stride_r.min(tile_h), base.stride_c.min(tile_w))
    });
    let params = SplitParams {
        tile_h,
        tile_w,
        stride_r,
        stride_c,
        background_sample: a.background.unwrap_or(base.background_sample),
        seed,
    };
    params.validate()?;
    Ok(BuildPlan::Split { params })
}

fn preprocess_cmd(a: PreprocessArgs, file: &FileConfig) -> Result<()> {
    let seed = resolve_seed(a.seed, file.seed)?;
    let crack_threshold = a.crack_threshold.or(file.crack_threshold).unwrap_or(DEFAULT_CRACK_THRESHOLD);
    let plan = preprocess_plan(&a, file, seed)?;
    let preset = DatasetPreset::from(a.preset);
    let (mode, target, split) = match plan {
        BuildPlan::Resize { target_h, target_w } => ("resize", Some((target_h, target_w)), None),
        BuildPlan::Split { params } => ("split", None, Some(params)),
    };
    log_resolved(
        "preprocess",
        &ResolvedPreprocess {
            images: &a.images,
            labels: &a.labels,
            out: &a.out,
            preset,
            mode,
            target,
            split,
            seed,
            crack_threshold,
        },
    );
    let (manifest, s) = build_dataset(&a.images, &a.labels, &a.out, preset, plan, seed, crack_threshold)?;
    println!(
        "{} images, {} candidate tiles: kept {} ({} crack, {} background); manifest {}",
        s.images,
        s.candidate_tiles,
        manifest.len(),
        s.crack_tiles,
        s.background_tiles,
        a.out.join("manifest.jsonl").display()
    );
    Ok(())
}

fn merge_json(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn preset_for(dataset: DatasetPreset) -> TrainPreset {
    match dataset {
        DatasetPreset::Ts1 => TrainPreset::Model1,
        DatasetPreset::Ts2 => TrainPreset::Model2,
        DatasetPreset::Ts3 => TrainPreset::Model3,
        DatasetPreset::Ts4 => TrainPreset::Model4,
        DatasetPreset::Custom => TrainPreset::Custom,
    }
}

/// Preset defaults, then the config file's `train` section, then flags.
fn resolve_train_config(a: &TrainArgs, file: &FileConfig, dataset: DatasetPreset) -> Result<TrainConfig> {
    let preset = a.preset.map(TrainPreset::from).unwrap_or_else(|| preset_for(dataset));
    let mut cfg = TrainConfig::for_preset(preset);
    let file_seed = file.train.as_ref().and_then(|t| t.get("seed")).and_then(Value::as_u64).or(file.seed);
    if let Some(section) = &file.train {
        let mut merged = serde_json::to_value(&cfg).expect("config serializes");
        merge_json(&mut merged, section.clone());
        cfg = serde_json::from_value(merged).map_err(|e| Error::Usage(format!("invalid train config: {e}")))?;
    }
    if let Some(e) = a.encoder {
        cfg.model = match e {
            EncoderArg::Tiny => ModelConfig::tiny(),
            EncoderArg::SeResnext50 => ModelConfig::se_resnext50(),
        };
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.optimizer {
        cfg.optimizer = match v {
            OptimizerArg::Sgd => OptimizerKind::SgdMomentum,
            OptimizerArg::Adam => OptimizerKind::AdaptiveMoments,
        };
    }
    if let Some(v) = a.loss {
        cfg.loss = match v {
            LossArg::Dice => LossKind::Dice,
            LossArg::DiceBce => LossKind::DicePlusBce,
        };
    }
    if let Some(v) = a.dice_smooth {
        cfg.dice_smooth = v;
    }
    if let Some(v) = a.crop {
        cfg.crop = match v {
            CropArg::None => CropMode::None,
            CropArg::Random => CropMode::Random,
        };
    }
    if let Some((h, w)) = a.crop_size {
        (cfg.crop_h, cfg.crop_w) = (h, w);
    }
    if a.no_augment {
        cfg.augment = AugmentConfig::disabled();
    }
    if a.oversample_crack {
        cfg.oversample_crack = true;
    }
    cfg.seed = resolve_seed(a.seed, file_seed)?;
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs, file: &FileConfig) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let cfg = resolve_train_config(&a, file, manifest.preset())?;
    let json = serde_json::to_vec_pretty(&cfg).expect("config serializes");
    log_resolved("train", &cfg);
    write_atomic(&a.out.join("resolved_config.json"), &json)?;
    let init = match &a.encoder_weights {
        Some(path) => {
            let mut model = crackfpn_core::FpnNet::new(cfg.model.clone(), cfg.seed)?;
            load_encoder_weights(&mut model, path)?;
            Some(model)
        }
        None => None,
    };
    let outcome = fit(&manifest, &a.manifest, &cfg, init, &a.out)?;
    match outcome.history.records.iter().map(|r| r.loss).min_by(f64::total_cmp) {
        Some(best) => println!(
            "trained {} epoch(s), best loss {best:.5}; checkpoint {}",
            outcome.history.records.len(),
            outcome.checkpoint.display()
        ),
        None => println!("no epochs run; initial checkpoint {}", outcome.checkpoint.display()),
    }
    Ok(())
}

#[derive(Serialize)]
struct ResolvedPredict<'a> {
    checkpoint: &'a Path,
    input: &'a Path,
    out: &'a Path,
    mode: ModeArg,
    tile: (usize, usize),
    train_size: (usize, usize),
    combine: CombineArg,
    threshold: f32,
}

/// `dir/mask` when `dir` is a predict output directory, else `dir`.
fn mask_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("mask");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn predict_cmd(a: PredictArgs, file: &FileConfig) -> Result<()> {
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let sec = file.predict.unwrap_or_default();
    let mode = a.mode.or(sec.mode).unwrap_or(ModeArg::Tiled);
    let tile = a.tile.unwrap_or((sec.tile_h.unwrap_or(480), sec.tile_w.unwrap_or(640)));
    let train_size = a.train_size.unwrap_or((sec.train_h.unwrap_or(1600), sec.train_w.unwrap_or(2400)));
    let combine = a.combine.or(sec.combine).unwrap_or(CombineArg::Mean);
    let threshold = a.threshold.or(sec.threshold).unwrap_or(model.config().threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Usage(format!("--threshold {threshold} outside [0, 1]")));
    }
    log_resolved(
        "predict",
        &ResolvedPredict {
            checkpoint: &a.checkpoint,
            input: &a.input,
            out: &a.out,
            mode,
            tile,
            train_size,
            combine,
            threshold,
        },
    );
    log::info!("checkpoint at step {} with {:?} encoder", meta.step, model.config().encoder);
    let predict_mode = match mode {
        ModeArg::Tiled => PredictMode::Tiled {
            tile_h: tile.0,
            tile_w: tile.1,
            combine: match combine {
                CombineArg::Mean => Combine::Mean,
                CombineArg::Max => Combine::Max,
            },
        },
        ModeArg::ResizeBack => PredictMode::ResizeBack { train_h: train_size.0, train_w: train_size.1 },
    };
    let inputs: Vec<(String, PathBuf)> = if a.input.is_dir() {
        list_rasters(&a.input)?.into_iter().collect()
    } else {
        let id = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        vec![(id, a.input.clone())]
    };
    if inputs.is_empty() {
        return Err(Error::input(&a.input, "no images found"));
    }
    for (id, path) in &inputs {
        let image = load_image(path)?;
        let p = predict_image(&model, &image, predict_mode, threshold)?;
        log::info!("{id}: {} network forward(s) on {}x{}", p.forwards, image.height(), image.width());
        write_prediction(&a.out, id, &image, &p)?;
        println!("{id}: {} forward(s), {} crack pixels", p.forwards, p.mask.count_ones());
    }
    Ok(())
}

/// Pairs two id-keyed listings, failing on any unmatched id.
fn match_ids(
    left: &Path,
    right: &Path,
    a: std::collections::BTreeMap<String, PathBuf>,
    mut b: std::collections::BTreeMap<String, PathBuf>,
) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let missing: Vec<&String> = a.keys().filter(|k| !b.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(Error::input(right, format!("no match for ids {missing:?}")));
    }
    let extra: Vec<&String> = b.keys().filter(|k| !a.contains_key(*k)).collect();
    if !extra.is_empty() {
        return Err(Error::input(left, format!("no match for ids {extra:?}")));
    }
    if a.is_empty() {
        return Err(Error::input(left, "no masks found"));
    }
    Ok(a.into_iter()
        .map(|(id, p)| {
            let q = b.remove(&id).expect("checked above");
            (id, p, q)
        })
        .collect())
}

#[derive(Serialize)]
struct ResolvedEvaluate<'a> {
    predictions: &'a Path,
    labels: &'a Path,
    out: &'a Path,
    chart_from: &'a [PathBuf],
    crack_threshold: u8,
}

fn evaluate_cmd(a: EvaluateArgs, file: &FileConfig) -> Result<()> {
    let crack_threshold = a.crack_threshold.or(file.crack_threshold).unwrap_or(DEFAULT_CRACK_THRESHOLD);
    let preds = mask_dir(&a.predictions);
    log_resolved(
        "evaluate",
        &ResolvedEvaluate {
            predictions: &preds,
            labels: &a.labels,
            out: &a.out,
            chart_from: &a.chart_from,
            crack_threshold,
        },
    );
    let pairs = match_ids(&preds, &a.labels, list_rasters(&preds)?, list_rasters(&a.labels)?)?;
    let loaded = pairs
        .par_iter()
        .map(|(id, p, l)| -> Result<_> {
            Ok(((id.clone(), load_mask(p, crack_threshold)?), (id.clone(), load_mask(l, crack_threshold)?)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (predictions, labels): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
    let report = evaluate_dataset(&predictions, &labels)?;
    write_report(&report, &a.out)?;
    let models = if a.chart_from.is_empty() {
        vec![(report.miou, report.mean_dice_loss)]
    } else {
        a.chart_from.iter().map(|p| read_report(p).map(|r| (r.miou, r.mean_dice_loss))).collect::<Result<Vec<_>>>()?
    };
    write_chart(&models, &a.out.join("chart.png"))?;
    println!("{} images: mIoU {:.4}, mean Dice loss {:.4}", report.count, report.miou, report.mean_dice_loss);
    Ok(())
}

#[derive(Serialize)]
struct ResolvedPostprocess<'a> {
    predictions: &'a Path,
    images: &'a Path,
    out: &'a Path,
    params: PostprocessParams,
}

fn postprocess_cmd(a: PostprocessArgs, file: &FileConfig) -> Result<()> {
    let mut params = file.postprocess.unwrap_or_default();
    if let Some(v) = a.kernel {
        params.kernel = v;
    }
    if let Some(v) = a.iterations {
        params.iterations = v;
    }
    if let Some(v) = a.intensity_threshold {
        params.intensity_threshold = v;
    }
    params.enabled = true;
    params.validate()?;
    let preds = mask_dir(&a.predictions);
    log_resolved("postprocess", &ResolvedPostprocess { predictions: &preds, images: &a.images, out: &a.out, params });
    let pairs = match_ids(&preds, &a.images, list_rasters(&preds)?, list_rasters(&a.images)?)?;
    pairs.par_iter().try_for_each(|(id, p, i)| -> Result<()> {
        let mask = load_mask(p, DEFAULT_CRACK_THRESHOLD)?;
        let photo = load_image(i)?;
        let extended = dilate_threshold_extend(&mask, &photo, &params)?;
        save_mask(&extended, &a.out.join(format!("{id}.png")))
    })?;
    println!("extended {} masks into {}", pairs.len(), a.out.display());
    Ok(())
}

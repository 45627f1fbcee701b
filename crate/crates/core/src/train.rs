//! Training configuration, batch assembly and the optimization step.
//!
//! Batch composition and augmentation depend only on `(seed, epoch)` and the
//! sample position, so a run is reproducible regardless of how samples are
//! loaded.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::augment::{augment, AugmentConfig};
use crate::error::{bail, Result};
use crate::fpn::{image_batch, FpnNet, ModelConfig};
use crate::loss::{loss_and_grad, LossKind};
use crate::metrics::Overlap;
use crate::nn::optim::{Optimizer, OptimizerKind};
use crate::nn::{Mode, Parameterized};
use crate::raster::{BinaryMask, RasterImage};
use crate::rng::{derive_seed_indexed, seeded};
use crate::tensor::Tensor;

/// Experiment presets; each expects one dataset preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrainPreset {
    Model1,
    Model2,
    Model3,
    Model4,
    Custom,
}

/// Training-set presets: two resize scales, crack tiles, crack plus
/// background tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DatasetPreset {
    Ts1,
    Ts2,
    Ts3,
    Ts4,
    Custom,
}

impl TrainPreset {
    pub fn dataset(self) -> DatasetPreset {
        match self {
            Self::Model1 => DatasetPreset::Ts1,
            Self::Model2 => DatasetPreset::Ts2,
            Self::Model3 => DatasetPreset::Ts3,
            Self::Model4 => DatasetPreset::Ts4,
            Self::Custom => DatasetPreset::Custom,
        }
    }

    /// Whether a manifest built with `dataset` may feed this preset.
    pub fn accepts(self, dataset: DatasetPreset) -> bool {
        self == Self::Custom || self.dataset() == dataset
    }

    fn resizes(self) -> bool {
        matches!(self, Self::Model1 | Self::Model2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CropMode {
    None,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub preset: TrainPreset,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub dice_smooth: f32,
    pub crop: CropMode,
    pub crop_h: usize,
    pub crop_w: usize,
    pub augment: AugmentConfig,
    /// Visit crack samples twice per epoch.
    pub oversample_crack: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            preset: TrainPreset::Custom,
            model: ModelConfig::se_resnext50(),
            epochs: 40,
            batch_size: 8,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::AdaptiveMoments,
            loss: LossKind::Dice,
            dice_smooth: 1.0,
            crop: CropMode::None,
            crop_h: 480,
            crop_w: 640,
            augment: AugmentConfig::default(),
            oversample_crack: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for a preset: resize presets train on random 480×640 crops.
    pub fn for_preset(preset: TrainPreset) -> Self {
        let crop = if preset.resizes() { CropMode::Random } else { CropMode::None };
        Self { preset, crop, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.augment.validate()?;
        if self.batch_size == 0 {
            bail!(InvalidArgument, "batch_size must be at least 1");
        }
        if !(self.dice_smooth > 0.0) || !self.dice_smooth.is_finite() {
            bail!(InvalidArgument, "dice_smooth must be positive and finite");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            bail!(InvalidArgument, "learning_rate must be non-negative and finite");
        }
        if self.crop == CropMode::Random
            && (!self.crop_h.is_multiple_of(32)
                || !self.crop_w.is_multiple_of(32)
                || self.crop_h == 0
                || self.crop_w == 0)
        {
            bail!(InvalidArgument, "crop {}x{} must be a positive multiple of 32", self.crop_h, self.crop_w);
        }
        Ok(())
    }
}

/// Random-access training data.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> Result<(RasterImage, BinaryMask)>;
    fn contains_crack(&self, index: usize) -> bool;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [(RasterImage, BinaryMask)] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }

    fn load(&self, index: usize) -> Result<(RasterImage, BinaryMask)> {
        match self.get(index) {
            Some(pair) => Ok(pair.clone()),
            None => bail!(InvalidArgument, "sample {index} out of range"),
        }
    }

    fn contains_crack(&self, index: usize) -> bool {
        self.get(index).is_some_and(|p| p.1.count_ones() > 0)
    }
}

impl SampleSource for Vec<(RasterImage, BinaryMask)> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load(&self, index: usize) -> Result<(RasterImage, BinaryMask)> {
        self.as_slice().load(index)
    }

    fn contains_crack(&self, index: usize) -> bool {
        self.as_slice().contains_crack(index)
    }
}

/// Visiting order for one epoch.
pub fn epoch_order(source: &dyn SampleSource, seed: u64, epoch: u64, oversample_crack: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..source.len()).collect();
    if oversample_crack {
        order.extend((0..source.len()).filter(|&i| source.contains_crack(i)));
    }
    order.shuffle(&mut seeded(derive_seed_indexed(seed, "epoch-order", &[epoch])));
    order
}

/// Random crop (when enabled) followed by augmentation, seeded per sample.
pub fn prepare_sample(
    image: &RasterImage,
    mask: &BinaryMask,
    config: &TrainConfig,
    epoch: u64,
    position: u64,
) -> Result<(RasterImage, BinaryMask)> {
    let mut rng = seeded(derive_seed_indexed(config.seed, "sample", &[epoch, position]));
    let (image, mask) = match config.crop {
        CropMode::None => (image.clone(), mask.clone()),
        CropMode::Random => {
            let (h, w) = (image.height(), image.width());
            if h < config.crop_h || w < config.crop_w {
                bail!(InvalidExtent, "sample {h}x{w} is smaller than crop {}x{}", config.crop_h, config.crop_w);
            }
            let r = rng.gen_range(0..=h - config.crop_h);
            let c = rng.gen_range(0..=w - config.crop_w);
            (image.window(r, c, config.crop_h, config.crop_w), mask.window(r, c, config.crop_h, config.crop_w))
        }
    };
    augment(&image, &mask, &config.augment, &mut rng)
}

/// Network input and flat 0/1 target for equally sized samples.
pub fn batch_tensors(samples: &[(RasterImage, BinaryMask)]) -> Result<(Tensor, Vec<f32>)> {
    let images: Vec<&RasterImage> = samples.iter().map(|s| &s.0).collect();
    let x = image_batch(&images)?;
    let mut target = Vec::with_capacity(samples.len() * x.h() * x.w());
    for (img, mask) in samples {
        if !mask.same_extent(img.height(), img.width()) {
            bail!(ShapeMismatch, "mask does not match its image");
        }
        target.extend(mask.data().iter().map(|&v| v as f32));
    }
    Ok((x, target))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub loss: f32,
    /// IoU of each thresholded prediction against its target.
    pub ious: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub train_miou: f64,
    pub steps: u64,
}

pub struct Trainer {
    pub model: FpnNet,
    pub optimizer: Optimizer,
    pub config: TrainConfig,
    step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = FpnNet::new(config.model.clone(), config.seed)?;
        Ok(Self::with_model(model, config))
    }

    pub fn with_model(model: FpnNet, config: TrainConfig) -> Self {
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate);
        Self { model, optimizer, config, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_steps(&mut self, step: u64) {
        self.step = step;
    }

    /// One forward pass, one loss evaluation, one parameter update.
    pub fn train_step(&mut self, batch: &[(RasterImage, BinaryMask)]) -> Result<StepOutcome> {
        let (x, target) = batch_tensors(batch)?;
        let n = batch.len();
        let prob = self.model.forward(&x, Mode::Train)?;
        if !prob.is_finite() {
            bail!(NonFinite, "network output is not finite at step {}", self.step);
        }
        let (loss, grad) = loss_and_grad(self.config.loss, prob.data(), &target, n, self.config.dice_smooth)?;
        let threshold = self.config.model.threshold;
        let per = prob.sample_len();
        let ious = (0..n)
            .map(|s| {
                let mut o = Overlap::default();
                for (&p, &t) in prob.sample(s).iter().zip(&target[s * per..(s + 1) * per]) {
                    let (p, t) = ((p > threshold) as u64, (t > 0.5) as u64);
                    o.intersection += p & t;
                    o.union += p | t;
                }
                o.iou()
            })
            .collect();
        self.model.zero_grad();
        let dprob = Tensor::from_vec(prob.shape(), grad)?;
        self.model.backward(&dprob)?;
        self.optimizer.step(&mut self.model);
        self.step += 1;
        Ok(StepOutcome { loss, ious })
    }

    /// One pass over `source`; returns sample-weighted mean loss and mean
    /// per-sample training IoU.
    pub fn run_epoch(&mut self, source: &dyn SampleSource, epoch: u64) -> Result<EpochStats> {
        if source.is_empty() {
            bail!(InvalidArgument, "no training samples");
        }
        let order = epoch_order(source, self.config.seed, epoch, self.config.oversample_crack);
        let (mut loss_sum, mut iou_sum, mut seen, mut steps) = (0.0f64, 0.0f64, 0usize, 0u64);
        for (chunk_idx, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len());
            for (k, &i) in chunk.iter().enumerate() {
                let (img, mask) = source.load(i)?;
                let position = (chunk_idx * self.config.batch_size + k) as u64;
                batch.push(prepare_sample(&img, &mask, &self.config, epoch, position)?);
            }
            let out = self.train_step(&batch)?;
            loss_sum += out.loss as f64 * batch.len() as f64;
            iou_sum += out.ious.iter().sum::<f64>();
            seen += batch.len();
            steps += 1;
        }
        Ok(EpochStats { loss: loss_sum / seen as f64, train_miou: iou_sum / seen as f64, steps })
    }
}

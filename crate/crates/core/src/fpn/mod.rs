//! Feature pyramid segmentation network.
//!
//! The encoder yields `C2..C5` at strides 4, 8, 16 and 32. Each level is
//! projected to `D` channels by a 1×1 lateral convolution; the decoder walks
//! top-down, adding the 2× bilinear upsample of the level above and
//! smoothing the sum with a 3×3 convolution (`P5` is the bare projection of
//! `C5`). Assembly brings every `P_i` to stride 4 with repeated
//! "W operations" (3×3 conv, then 2× bilinear upsample), sums them, and a
//! 3×3 head followed by ×4 bilinear upsampling and a sigmoid produces the
//! crack probability at input resolution.

mod encoder;

use alloc::vec::Vec;
use alloc::{format, vec};

pub use encoder::{Encoder, EncoderKind};
use encoder::{RESNEXT_WIDTHS, TINY_WIDTHS};

use crate::error::{bail, Result};
use crate::nn::upsample::{resize, resize_backward, upsample2x};
use crate::nn::{join, sigmoid, Conv2d, Mode, Param, Parameterized};
use crate::raster::{BinaryMask, ProbMask, RasterImage};
use crate::rng::seeded;
use crate::tensor::Tensor;

/// Per-channel input normalization (ImageNet statistics, `[0, 1]` scale).
const INPUT_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const INPUT_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    /// Channel widths of `C2..C5`.
    pub stage_channels: [usize; 4],
    /// Pyramid width `D`.
    pub pyramid_width: usize,
    pub out_channels: usize,
    pub threshold: f32,
    pub se_reduction: usize,
    /// Apply a 3×3 convolution to `P2` in assembly instead of passing it through.
    pub h2_conv: bool,
}

impl ModelConfig {
    pub fn tiny() -> Self {
        Self {
            encoder: EncoderKind::Tiny,
            stage_channels: TINY_WIDTHS,
            pyramid_width: 32,
            out_channels: 1,
            threshold: 0.5,
            se_reduction: 4,
            h2_conv: false,
        }
    }

    pub fn se_resnext50() -> Self {
        Self {
            encoder: EncoderKind::SeResnext50_32x4d,
            stage_channels: RESNEXT_WIDTHS,
            pyramid_width: 256,
            out_channels: 1,
            threshold: 0.5,
            se_reduction: 16,
            h2_conv: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels != 1 {
            bail!(InvalidArgument, "only single-channel crack output is supported");
        }
        if self.pyramid_width == 0 {
            bail!(InvalidArgument, "pyramid width must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            bail!(InvalidArgument, "threshold {} outside [0, 1]", self.threshold);
        }
        if self.se_reduction == 0 {
            bail!(InvalidArgument, "SE reduction must be positive");
        }
        if let Some(w) = self.stage_channels.iter().find(|&&w| w == 0 || w % self.se_reduction != 0) {
            bail!(InvalidArgument, "stage width {w} is not a positive multiple of SE reduction {}", self.se_reduction);
        }
        if self.encoder == EncoderKind::SeResnext50_32x4d && self.stage_channels != RESNEXT_WIDTHS {
            bail!(InvalidArgument, "se_resnext50_32x4d has fixed stage widths {RESNEXT_WIDTHS:?}");
        }
        Ok(())
    }
}

/// Every intermediate level of one forward pass.
#[derive(Debug, Clone)]
pub struct PyramidFeatures {
    /// Encoder stages `C2..C5`.
    pub c: [Tensor; 4],
    /// Decoder outputs `P2..P5`.
    pub p: [Tensor; 4],
    /// Assembly outputs `H2..H5`, all at the `C2` resolution.
    pub h: [Tensor; 4],
    /// Crack probabilities, `N×1×H×W`.
    pub output: Tensor,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    level_hw: [(usize, usize); 4],
    prob: Tensor,
}

#[derive(Debug, Clone)]
pub struct FpnNet {
    config: ModelConfig,
    encoder: Encoder,
    /// 1×1 projections for levels 2..5.
    lateral: [Conv2d; 4],
    /// 3×3 smoothing after each merge, for levels 2..4.
    smooth: [Conv2d; 3],
    /// W-operation convolutions; level `i` (2..5) has `i − 2` of them.
    w_ops: [Vec<Conv2d>; 4],
    h2_conv: Option<Conv2d>,
    head: Conv2d,
    cache: Option<ForwardCache>,
}

impl FpnNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let encoder = Encoder::new(config.encoder, config.stage_channels, config.se_reduction, &mut rng)?;
        let d = config.pyramid_width;
        let lateral = config.stage_channels.map(|c| Conv2d::pointwise(c, d, &mut rng));
        let smooth = [(); 3].map(|_| Conv2d::same3x3(d, d, &mut rng));
        let w_ops = [0, 1, 2, 3].map(|n| (0..n).map(|_| Conv2d::same3x3(d, d, &mut rng)).collect());
        let h2_conv = config.h2_conv.then(|| Conv2d::same3x3(d, d, &mut rng));
        let head = Conv2d::same3x3(d, config.out_channels, &mut rng);
        Ok(Self { config, encoder, lateral, smooth, w_ops, h2_conv, head, cache: None })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder_mut(&mut self) -> &mut Encoder {
        &mut self.encoder
    }

    /// `C_i → L_i`: 1×1 projection of encoder level `level` (2..=5) to `D` channels.
    pub fn lateral_project(&mut self, level: usize, c: &Tensor, mode: Mode) -> Result<Tensor> {
        let idx = level_index(level)?;
        if c.c() != self.config.stage_channels[idx] {
            bail!(
                ShapeMismatch,
                "C{level} has {} channels, configured width is {}",
                c.c(),
                self.config.stage_channels[idx]
            );
        }
        self.lateral[idx].forward(c, mode)
    }

    /// `P_i = smooth(up2(P_{i+1}) + L_i)` for `level` in 2..=4.
    pub fn top_down_merge(&mut self, level: usize, upper: &Tensor, lateral: &Tensor, mode: Mode) -> Result<Tensor> {
        let idx = level_index(level)?;
        if idx > 2 {
            bail!(InvalidArgument, "P5 has no upper level to merge");
        }
        let [n, c, h, w] = lateral.shape();
        if upper.shape() != [n, c, h / 2, w / 2] || h % 2 != 0 || w % 2 != 0 {
            bail!(ShapeMismatch, "cannot merge upper {:?} into lateral {:?}", upper.shape(), lateral.shape());
        }
        let mut merged = upsample2x(upper);
        merged.add_assign(lateral)?;
        self.smooth[idx].forward(&merged, mode)
    }

    /// One W operation: 3×3 convolution, then 2× bilinear upsampling.
    /// `step` selects which of level `level`'s convolutions to use.
    pub fn w_op(&mut self, level: usize, step: usize, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let idx = level_index(level)?;
        let Some(conv) = self.w_ops[idx].get_mut(step) else {
            bail!(InvalidArgument, "level {level} has no W operation #{step}");
        };
        Ok(upsample2x(&conv.forward(x, mode)?))
    }

    /// `P_i → H_i`: `i − 2` W operations (none for `P2`).
    pub fn assemble_level(&mut self, level: usize, p: &Tensor, mode: Mode) -> Result<Tensor> {
        let idx = level_index(level)?;
        if idx == 0 {
            return match &mut self.h2_conv {
                Some(conv) => conv.forward(p, mode),
                None => Ok(p.clone()),
            };
        }
        let mut h = p.clone();
        for step in 0..idx {
            h = self.w_op(level, step, &h, mode)?;
        }
        Ok(h)
    }

    /// Sums `H2..H5`, applies the 3×3 head, upsamples ×4 and squashes to
    /// probabilities.
    pub fn head_forward(&mut self, h: &[Tensor; 4], mode: Mode) -> Result<Tensor> {
        let mut sum = h[0].clone();
        for level in &h[1..] {
            sum.add_assign(level)?;
        }
        let logits = self.head.forward(&sum, mode)?;
        let mut out = resize(&logits, logits.h() * 4, logits.w() * 4)?;
        out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(out)
    }

    /// Assembly stage from decoder outputs `P2..P5` to probabilities.
    pub fn assemble_and_head(&mut self, p: &[Tensor; 4], mode: Mode) -> Result<Tensor> {
        let [n, d, h2, w2] = p[0].shape();
        for (i, level) in p.iter().enumerate() {
            let expect = [n, d, h2 >> i, w2 >> i];
            if level.shape() != expect || d != self.config.pyramid_width {
                bail!(ShapeMismatch, "P{} has shape {:?}, expected {expect:?}", i + 2, level.shape());
            }
        }
        let mut hs = Vec::with_capacity(4);
        for (i, level) in p.iter().enumerate() {
            hs.push(self.assemble_level(i + 2, level, mode)?);
        }
        let hs: [Tensor; 4] = hs.try_into().expect("four levels");
        self.head_forward(&hs, mode)
    }

    fn run(&mut self, x: &Tensor, mode: Mode, keep: bool) -> Result<(Tensor, Option<PyramidFeatures>)> {
        let c = self.encoder.forward(x, mode)?;
        let mut lat = Vec::with_capacity(4);
        for (i, ci) in c.iter().enumerate() {
            lat.push(self.lateral_project(i + 2, ci, mode)?);
        }
        let p5 = lat.pop().expect("four levels");
        let p4 = self.top_down_merge(4, &p5, &lat[2], mode)?;
        let p3 = self.top_down_merge(3, &p4, &lat[1], mode)?;
        let p2 = self.top_down_merge(2, &p3, &lat[0], mode)?;
        drop(lat);
        let p = [p2, p3, p4, p5];
        let mut hs = Vec::with_capacity(4);
        for (i, level) in p.iter().enumerate() {
            hs.push(self.assemble_level(i + 2, level, mode)?);
        }
        let h: [Tensor; 4] = hs.try_into().expect("four levels");
        let out = self.head_forward(&h, mode)?;
        if mode == Mode::Train {
            self.cache = Some(ForwardCache { level_hw: [0, 1, 2, 3].map(|i| (p[i].h(), p[i].w())), prob: out.clone() });
        }
        let features = keep.then(|| PyramidFeatures { c, p, h, output: out.clone() });
        Ok((out, features))
    }

    /// `N×3×H×W` normalized input → `N×1×H×W` probabilities.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.run(x, mode, false)?.0)
    }

    /// Forward pass that also returns every pyramid level.
    pub fn forward_features(&mut self, x: &Tensor) -> Result<PyramidFeatures> {
        Ok(self.run(x, Mode::Eval, true)?.1.expect("features requested"))
    }

    /// Backpropagates `∂loss/∂prob` through the whole network, accumulating
    /// parameter gradients. Returns the gradient with respect to the input.
    pub fn backward(&mut self, dprob: &Tensor) -> Result<Tensor> {
        let Some(cache) = self.cache.take() else {
            bail!(InvalidArgument, "backward without a training forward");
        };
        if dprob.shape() != cache.prob.shape() {
            bail!(ShapeMismatch, "gradient {:?} vs output {:?}", dprob.shape(), cache.prob.shape());
        }
        let mut dlogits = dprob.clone();
        for (g, &p) in dlogits.data_mut().iter_mut().zip(cache.prob.data()) {
            *g *= p * (1.0 - p);
        }
        let (h2, w2) = cache.level_hw[0];
        let dlow = resize_backward(&dlogits, h2, w2);
        let dsum = self.head.backward(&dlow)?;

        let mut dp: [Tensor; 4] = [(); 4].map(|_| Tensor::zeros([0, 0, 0, 0]));
        dp[0] = match &mut self.h2_conv {
            Some(conv) => conv.backward(&dsum)?,
            None => dsum.clone(),
        };
        for idx in 1..4 {
            let mut g = dsum.clone();
            for conv in self.w_ops[idx].iter_mut().rev() {
                g = resize_backward(&g, g.h() / 2, g.w() / 2);
                g = conv.backward(&g)?;
            }
            dp[idx] = g;
        }

        let mut dlat: Vec<Tensor> = Vec::with_capacity(4);
        for idx in 0..3 {
            let dmerged = self.smooth[idx].backward(&dp[idx])?;
            let (uh, uw) = cache.level_hw[idx + 1];
            let dup = resize_backward(&dmerged, uh, uw);
            dp[idx + 1].add_assign(&dup)?;
            dlat.push(dmerged);
        }
        dlat.push(core::mem::replace(&mut dp[3], Tensor::zeros([0, 0, 0, 0])));

        let mut dc = Vec::with_capacity(4);
        for (conv, g) in self.lateral.iter_mut().zip(&dlat) {
            dc.push(conv.backward(g)?);
        }
        self.encoder.backward(dc.try_into().expect("four levels"))
    }

    /// Probability map for a single image, evaluated with frozen statistics.
    pub fn predict(&mut self, image: &RasterImage) -> Result<ProbMask> {
        let x = image_batch(&[image])?;
        let out = self.forward(&x, Mode::Eval)?;
        let [_, _, h, w] = out.shape();
        ProbMask::new(h, w, clamp_unit(out.into_data()))
    }

    /// Thresholded prediction using the configured threshold.
    pub fn segment(&mut self, image: &RasterImage) -> Result<BinaryMask> {
        let threshold = self.config.threshold;
        binarize(&self.predict(image)?, threshold)
    }

    #[cfg(test)]
    pub(crate) fn head_mut(&mut self) -> &mut Conv2d {
        &mut self.head
    }

    #[cfg(test)]
    pub(crate) fn smooth_mut(&mut self, level: usize) -> &mut Conv2d {
        &mut self.smooth[level - 2]
    }
}

fn clamp_unit(mut data: Vec<f32>) -> Vec<f32> {
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    data
}

fn level_index(level: usize) -> Result<usize> {
    if !(2..=5).contains(&level) {
        bail!(InvalidArgument, "pyramid level {level} outside 2..=5");
    }
    Ok(level - 2)
}

/// Pixel is crack iff its probability is strictly larger than `threshold`.
pub fn binarize(prob: &ProbMask, threshold: f32) -> Result<BinaryMask> {
    prob.binarize(threshold)
}

/// Normalized `N×3×H×W` network input from equally sized images.
pub fn image_batch(images: &[&RasterImage]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        bail!(InvalidArgument, "empty image batch");
    };
    let (h, w) = (first.height(), first.width());
    let plane = h * w;
    let mut data = vec![0.0f32; images.len() * 3 * plane];
    for (s, img) in images.iter().enumerate() {
        if img.height() != h || img.width() != w {
            bail!(ShapeMismatch, "batch mixes {h}x{w} and {}x{}", img.height(), img.width());
        }
        let dst = &mut data[s * 3 * plane..(s + 1) * 3 * plane];
        for (i, px) in img.data().chunks_exact(3).enumerate() {
            for ch in 0..3 {
                dst[ch * plane + i] = (px[ch] as f32 / 255.0 - INPUT_MEAN[ch]) / INPUT_STD[ch];
            }
        }
    }
    Tensor::from_vec([images.len(), 3, h, w], data)
}

impl Parameterized for FpnNet {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        for (i, conv) in self.lateral.iter_mut().enumerate() {
            conv.visit_params(&join(prefix, &format!("decoder.lateral{}", i + 2)), f);
        }
        for (i, conv) in self.smooth.iter_mut().enumerate() {
            conv.visit_params(&join(prefix, &format!("decoder.smooth{}", i + 2)), f);
        }
        for (i, convs) in self.w_ops.iter_mut().enumerate() {
            for (j, conv) in convs.iter_mut().enumerate() {
                conv.visit_params(&join(prefix, &format!("assembly.w{}.{j}", i + 2)), f);
            }
        }
        if let Some(conv) = &mut self.h2_conv {
            conv.visit_params(&join(prefix, "assembly.h2"), f);
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }
}

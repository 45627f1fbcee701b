//! Full-resolution inference: resize-back, or padded non-overlapping tiles
//! plus junction-centered tiles recombined into one probability map.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::fpn::FpnNet;
use crate::preprocess::{pad_image, padded_len, Resample};
use crate::raster::{ProbMask, RasterImage, TileRecord};

/// Anything that maps an image tile to a same-size probability map.
pub trait TilePredictor {
    fn predict_tile(&mut self, tile: &RasterImage) -> Result<ProbMask>;
}

impl TilePredictor for FpnNet {
    fn predict_tile(&mut self, tile: &RasterImage) -> Result<ProbMask> {
        self.predict(tile)
    }
}

impl<F: FnMut(&RasterImage) -> Result<ProbMask>> TilePredictor for F {
    fn predict_tile(&mut self, tile: &RasterImage) -> Result<ProbMask> {
        self(tile)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Combine {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InferenceMode {
    ResizeBack,
    Tiled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferencePlan {
    pub original_h: usize,
    pub original_w: usize,
    pub padded_h: usize,
    pub padded_w: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    /// Non-overlapping grid, row-major.
    pub base: Vec<TileRecord>,
    /// One tile per interior grid junction, row-major.
    pub center: Vec<TileRecord>,
    pub combine: Combine,
}

impl InferencePlan {
    /// Base tiles first, then center tiles.
    pub fn tiles(&self) -> impl Iterator<Item = &TileRecord> {
        self.base.iter().chain(&self.center)
    }

    pub fn len(&self) -> usize {
        self.base.len() + self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_combine(mut self, combine: Combine) -> Self {
        self.combine = combine;
        self
    }
}

fn record(row_off: usize, col_off: usize, tile_h: usize, tile_w: usize, h: usize, w: usize) -> TileRecord {
    TileRecord {
        image_id: String::new(),
        row_off,
        col_off,
        tile_h,
        tile_w,
        contains_crack: false,
        touches_padding: row_off + tile_h > h || col_off + tile_w > w,
    }
}

pub fn plan_tiles(height: usize, width: usize, tile_h: usize, tile_w: usize) -> Result<InferencePlan> {
    if height == 0 || width == 0 {
        bail!(InvalidExtent, "image {height}x{width} is empty");
    }
    if tile_h == 0 || tile_w == 0 || !tile_h.is_multiple_of(32) || !tile_w.is_multiple_of(32) {
        bail!(InvalidArgument, "tile {tile_h}x{tile_w} must be a positive multiple of 32");
    }
    let (ph, pw) = (padded_len(height, tile_h), padded_len(width, tile_w));
    let (rows, cols) = (ph / tile_h, pw / tile_w);
    let mut base = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            base.push(record(r * tile_h, c * tile_w, tile_h, tile_w, height, width));
        }
    }
    let mut center = Vec::new();
    for r in 1..rows {
        for c in 1..cols {
            center.push(record(r * tile_h - tile_h / 2, c * tile_w - tile_w / 2, tile_h, tile_w, height, width));
        }
    }
    Ok(InferencePlan {
        original_h: height,
        original_w: width,
        padded_h: ph,
        padded_w: pw,
        tile_h,
        tile_w,
        base,
        center,
        combine: Combine::Mean,
    })
}

/// Crops of the zero-padded image, in plan order.
pub fn extract_tiles(image: &RasterImage, plan: &InferencePlan) -> Result<Vec<RasterImage>> {
    if image.height() != plan.original_h || image.width() != plan.original_w {
        bail!(
            ShapeMismatch,
            "plan for {}x{} applied to {}x{} image",
            plan.original_h,
            plan.original_w,
            image.height(),
            image.width()
        );
    }
    let padded = pad_image(image, plan.padded_h, plan.padded_w);
    Ok(plan.tiles().map(|t| padded.window(t.row_off, t.col_off, t.tile_h, t.tile_w)).collect())
}

/// Per-pixel merge of tile probabilities over the padded frame.
pub struct Recombiner {
    padded_w: usize,
    combine: Combine,
    acc: Vec<f32>,
    count: Vec<u32>,
}

impl Recombiner {
    pub fn new(plan: &InferencePlan) -> Self {
        let n = plan.padded_h * plan.padded_w;
        Self { padded_w: plan.padded_w, combine: plan.combine, acc: vec![0.0; n], count: vec![0; n] }
    }

    pub fn add(&mut self, tile: &TileRecord, prob: &ProbMask) -> Result<()> {
        if prob.height() != tile.tile_h || prob.width() != tile.tile_w {
            bail!(
                ShapeMismatch,
                "model returned {}x{} for a {}x{} tile",
                prob.height(),
                prob.width(),
                tile.tile_h,
                tile.tile_w
            );
        }
        for y in 0..tile.tile_h {
            let row = (tile.row_off + y) * self.padded_w + tile.col_off;
            let src = &prob.data()[y * tile.tile_w..(y + 1) * tile.tile_w];
            let acc = &mut self.acc[row..row + tile.tile_w];
            let count = &mut self.count[row..row + tile.tile_w];
            for ((a, k), &p) in acc.iter_mut().zip(count.iter_mut()).zip(src) {
                *a = match self.combine {
                    Combine::Mean => *a + p,
                    Combine::Max if *k == 0 => p,
                    Combine::Max => a.max(p),
                };
                *k += 1;
            }
        }
        Ok(())
    }

    /// Merged map cropped to the original extent.
    pub fn finish(self, plan: &InferencePlan) -> Result<ProbMask> {
        let mut out = Vec::with_capacity(plan.original_h * plan.original_w);
        for y in 0..plan.original_h {
            for x in 0..plan.original_w {
                let i = y * self.padded_w + x;
                let k = self.count[i];
                if k == 0 {
                    bail!(InvalidExtent, "pixel ({y},{x}) is not covered by any tile");
                }
                out.push(match self.combine {
                    Combine::Mean => self.acc[i] / k as f32,
                    Combine::Max => self.acc[i],
                });
            }
        }
        ProbMask::new(plan.original_h, plan.original_w, out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

/// Merges per-tile predictions given in plan order.
pub fn recombine(plan: &InferencePlan, probs: &[ProbMask]) -> Result<ProbMask> {
    if probs.len() != plan.len() {
        bail!(ShapeMismatch, "{} predictions for {} planned tiles", probs.len(), plan.len());
    }
    let mut merger = Recombiner::new(plan);
    for (tile, prob) in plan.tiles().zip(probs) {
        merger.add(tile, prob)?;
    }
    merger.finish(plan)
}

pub fn predict_tiled<P: TilePredictor + ?Sized>(
    model: &mut P,
    image: &RasterImage,
    plan: &InferencePlan,
) -> Result<ProbMask> {
    let tiles = extract_tiles(image, plan)?;
    let mut merger = Recombiner::new(plan);
    for (record, tile) in plan.tiles().zip(&tiles) {
        merger.add(record, &model.predict_tile(tile)?)?;
    }
    merger.finish(plan)
}

/// Resizes to the training extent, predicts once and resizes the map back.
pub fn predict_resize_back<P: TilePredictor + ?Sized>(
    model: &mut P,
    image: &RasterImage,
    train_h: usize,
    train_w: usize,
) -> Result<ProbMask> {
    if train_h == 0 || train_w == 0 || !train_h.is_multiple_of(32) || !train_w.is_multiple_of(32) {
        bail!(InvalidArgument, "train size {train_h}x{train_w} must be a positive multiple of 32");
    }
    let (h, w) = (image.height(), image.width());
    if (h, w) == (train_h, train_w) {
        return model.predict_tile(image);
    }
    let small = image.resize_bilinear(train_h, train_w)?;
    let prob = model.predict_tile(&small)?;
    if prob.height() != train_h || prob.width() != train_w {
        bail!(ShapeMismatch, "model returned {}x{} for {train_h}x{train_w} input", prob.height(), prob.width());
    }
    prob.resize_bilinear(h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BinaryMask;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng as _;

    /// Reads the mask back out of the red channel.
    fn identity_model(tile: &RasterImage) -> Result<ProbMask> {
        ProbMask::new(
            tile.height(),
            tile.width(),
            tile.data().chunks_exact(3).map(|p| (p[0] > 127) as u8 as f32).collect(),
        )
    }

    fn encode(mask: &BinaryMask) -> RasterImage {
        RasterImage::new(mask.height(), mask.width(), mask.data().iter().flat_map(|&v| [v * 255, 0, 0]).collect())
            .unwrap()
    }

    /// Junction enumeration independent of `plan_tiles`.
    fn oracle_counts(h: usize, w: usize, th: usize, tw: usize) -> (usize, usize) {
        let rows = h.div_ceil(th);
        let cols = w.div_ceil(tw);
        let mut junctions = 0;
        for r in 0..=rows {
            for c in 0..=cols {
                if r > 0 && r < rows && c > 0 && c < cols {
                    junctions += 1;
                }
            }
        }
        (rows * cols, junctions)
    }

    #[test]
    fn plan_counts_for_camera_resolutions() {
        for (h, w, ph, pw, base, center) in [(3264, 4928, 3360, 5120, 56, 42), (3864, 5152, 4320, 5760, 81, 64)] {
            let plan = plan_tiles(h, w, 480, 640).unwrap();
            assert_eq!((plan.padded_h, plan.padded_w), (ph, pw));
            assert_eq!(oracle_counts(h, w, 480, 640), (base, center));
            assert_eq!((plan.base.len(), plan.center.len()), (base, center));
        }
        let single = plan_tiles(480, 640, 480, 640).unwrap();
        assert_eq!((single.base.len(), single.center.len()), (1, 0));
    }

    #[test]
    fn center_tiles_sit_on_junctions() {
        let plan = plan_tiles(200, 300, 64, 96).unwrap();
        for t in &plan.center {
            let (cy, cx) = (t.row_off + t.tile_h / 2, t.col_off + t.tile_w / 2);
            assert_eq!((cy % 64, cx % 96), (0, 0));
            let corners = plan.base.iter().filter(|b| {
                (b.row_off == cy || b.row_off + b.tile_h == cy) && (b.col_off == cx || b.col_off + b.tile_w == cx)
            });
            assert_eq!(corners.count(), 4);
            assert!(t.fits_within(plan.padded_h, plan.padded_w));
        }
    }

    #[test]
    fn invalid_tile_sizes_are_rejected() {
        assert!(plan_tiles(100, 100, 30, 64).is_err());
        assert!(plan_tiles(0, 100, 32, 64).is_err());
    }

    #[test]
    fn overlap_mean_and_max() {
        let plan = InferencePlan {
            original_h: 1,
            original_w: 3,
            padded_h: 1,
            padded_w: 3,
            tile_h: 1,
            tile_w: 2,
            base: vec![record(0, 0, 1, 2, 1, 3), record(0, 1, 1, 2, 1, 3)],
            center: vec![],
            combine: Combine::Mean,
        };
        let probs = [ProbMask::new(1, 2, vec![0.2, 0.2]).unwrap(), ProbMask::new(1, 2, vec![0.6, 0.6]).unwrap()];
        let mean = recombine(&plan, &probs).unwrap();
        assert!((mean.get(0, 1) - 0.4).abs() < 1e-7);
        assert_eq!((mean.get(0, 0), mean.get(0, 2)), (0.2, 0.6));
        let max = recombine(&plan.clone().with_combine(Combine::Max), &probs).unwrap();
        assert_eq!(max.data(), &[0.2, 0.6, 0.6]);
    }

    #[test]
    fn model_size_mismatch_is_an_error() {
        let plan = plan_tiles(64, 64, 32, 32).unwrap();
        let img = RasterImage::filled(64, 64, [0, 0, 0]).unwrap();
        let mut bad = |_: &RasterImage| ProbMask::filled(16, 16, 0.5);
        assert!(predict_tiled(&mut bad, &img, &plan).is_err());
        let other = RasterImage::filled(60, 64, [0, 0, 0]).unwrap();
        assert!(predict_tiled(&mut identity_model, &other, &plan).is_err());
    }

    #[test]
    fn resize_back_paths() {
        let img = RasterImage::filled(64, 96, [9, 9, 9]).unwrap();
        let mut half = |t: &RasterImage| ProbMask::filled(t.height(), t.width(), 0.3);
        let same = predict_resize_back(&mut half, &img, 64, 96).unwrap();
        assert_eq!(same, ProbMask::filled(64, 96, 0.3).unwrap());
        let odd = RasterImage::filled(70, 101, [9, 9, 9]).unwrap();
        let back = predict_resize_back(&mut half, &odd, 32, 64).unwrap();
        assert_eq!((back.height(), back.width()), (70, 101));
        assert!(back.data().iter().all(|&v| v == 0.3));
        assert!(predict_resize_back(&mut half, &odd, 30, 64).is_err());
    }

    #[test]
    fn identity_model_round_trip_on_random_sizes() {
        let mut rng = seeded(11);
        for _ in 0..20 {
            let (h, w) = (rng.gen_range(1..200), rng.gen_range(1..200));
            let mask = BinaryMask::new(h, w, (0..h * w).map(|_| rng.gen_bool(0.3) as u8).collect()).unwrap();
            let plan = plan_tiles(h, w, 32, 64).unwrap();
            let prob = predict_tiled(&mut identity_model, &encode(&mask), &plan).unwrap();
            assert_eq!(prob.binarize(0.5).unwrap(), mask);
        }
    }

    proptest! {
        #[test]
        fn constant_model_is_conserved(h in 1usize..150, w in 1usize..150, c in 0.0f32..=1.0, max in any::<bool>()) {
            let combine = if max { Combine::Max } else { Combine::Mean };
            let plan = plan_tiles(h, w, 32, 32).unwrap().with_combine(combine);
            let img = RasterImage::filled(h, w, [1, 2, 3]).unwrap();
            let mut constant = |t: &RasterImage| ProbMask::filled(t.height(), t.width(), c);
            let out = predict_tiled(&mut constant, &img, &plan).unwrap();
            prop_assert!(out.data().iter().all(|&v| v == c));
        }

        #[test]
        fn base_tiles_partition_and_all_tiles_cover(h in 1usize..200, w in 1usize..200) {
            let plan = plan_tiles(h, w, 32, 64).unwrap();
            let mut base = vec![0u32; plan.padded_h * plan.padded_w];
            for t in &plan.base {
                for y in t.row_off..t.row_off + t.tile_h {
                    for x in t.col_off..t.col_off + t.tile_w {
                        base[y * plan.padded_w + x] += 1;
                    }
                }
            }
            prop_assert!(base.iter().all(|&k| k == 1));
            prop_assert!(plan.tiles().all(|t| t.fits_within(plan.padded_h, plan.padded_w)));
        }
    }
}

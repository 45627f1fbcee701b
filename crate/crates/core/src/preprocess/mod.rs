//! Dataset construction: resizing, zero padding, windowed tiling and
//! background sampling. Training-time augmentation lives in [`crate::augment`].

mod resize;

pub use resize::{resize_bilinear, Resample};

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::raster::{BinaryMask, RasterImage, TileRecord};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SplitParams {
    pub tile_h: usize,
    pub tile_w: usize,
    pub stride_r: usize,
    pub stride_c: usize,
    pub background_sample: usize,
    pub seed: u64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self { tile_h: 480, tile_w: 640, stride_r: 320, stride_c: 320, background_sample: 3500, seed: 0 }
    }
}

impl SplitParams {
    pub fn validate(&self) -> Result<()> {
        if self.tile_h == 0 || self.tile_w == 0 || !self.tile_h.is_multiple_of(32) || !self.tile_w.is_multiple_of(32) {
            bail!(InvalidArgument, "tile {}x{} must be a positive multiple of 32", self.tile_h, self.tile_w);
        }
        if self.stride_r == 0 || self.stride_c == 0 || self.stride_r > self.tile_h || self.stride_c > self.tile_w {
            bail!(
                InvalidArgument,
                "stride {}/{} must be positive and no larger than the tile",
                self.stride_r,
                self.stride_c
            );
        }
        Ok(())
    }
}

/// An image/mask pair after bottom/right zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedPair {
    pub image: RasterImage,
    pub mask: BinaryMask,
    pub original_h: usize,
    pub original_w: usize,
}

impl PaddedPair {
    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    /// Image and mask window of a tile.
    pub fn tile(&self, t: &TileRecord) -> (RasterImage, BinaryMask) {
        (
            self.image.window(t.row_off, t.col_off, t.tile_h, t.tile_w),
            self.mask.window(t.row_off, t.col_off, t.tile_h, t.tile_w),
        )
    }
}

/// Smallest multiple of `tile` that is at least `len`.
pub fn padded_len(len: usize, tile: usize) -> usize {
    len.div_ceil(tile) * tile
}

pub fn pad_image(image: &RasterImage, target_h: usize, target_w: usize) -> RasterImage {
    image.window(0, 0, target_h, target_w)
}

pub fn pad_to_tile_multiple(
    image: &RasterImage,
    mask: &BinaryMask,
    tile_h: usize,
    tile_w: usize,
) -> Result<PaddedPair> {
    if tile_h == 0 || tile_w == 0 {
        bail!(InvalidArgument, "tile {tile_h}x{tile_w} is empty");
    }
    let (h, w) = (image.height(), image.width());
    if !mask.same_extent(h, w) {
        bail!(ShapeMismatch, "image {h}x{w} vs mask {}x{}", mask.height(), mask.width());
    }
    let (ph, pw) = (padded_len(h, tile_h), padded_len(w, tile_w));
    Ok(PaddedPair { image: pad_image(image, ph, pw), mask: mask.window(0, 0, ph, pw), original_h: h, original_w: w })
}

/// Window origins along one axis: every stride step that fits, plus one
/// window clamped to the far edge when the steps do not land on it.
pub fn window_origins(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    if tile > len || stride == 0 {
        return Vec::new();
    }
    let last = len - tile;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if !last.is_multiple_of(stride) {
        out.push(last);
    }
    out
}

/// Summed-area table over a mask, `(h+1)×(w+1)`.
struct Integral {
    w: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(mask: &BinaryMask) -> Self {
        let (h, w) = (mask.height(), mask.width());
        let stride = w + 1;
        let mut sums = alloc::vec![0u32; (h + 1) * stride];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += mask.get(y, x) as u32;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { w, sums }
    }

    fn count(&self, r: usize, c: usize, h: usize, w: usize) -> u32 {
        let s = self.w + 1;
        let at = |y: usize, x: usize| self.sums[y * s + x];
        at(r + h, c + w) + at(r, c) - at(r, c + w) - at(r + h, c)
    }
}

pub fn split_training_tiles(padded: &PaddedPair, params: &SplitParams, image_id: &str) -> Result<Vec<TileRecord>> {
    params.validate()?;
    let (h, w) = (padded.height(), padded.width());
    if params.tile_h > h || params.tile_w > w {
        bail!(InvalidExtent, "tile {}x{} exceeds padded image {h}x{w}", params.tile_h, params.tile_w);
    }
    let integral = Integral::new(&padded.mask);
    let rows = window_origins(h, params.tile_h, params.stride_r);
    let cols = window_origins(w, params.tile_w, params.stride_c);
    let mut tiles = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            tiles.push(TileRecord {
                image_id: String::from(image_id),
                row_off: r,
                col_off: c,
                tile_h: params.tile_h,
                tile_w: params.tile_w,
                contains_crack: integral.count(r, c, params.tile_h, params.tile_w) > 0,
                touches_padding: r + params.tile_h > padded.original_h || c + params.tile_w > padded.original_w,
            });
        }
    }
    Ok(tiles)
}

pub fn select_crack_tiles(tiles: &[TileRecord]) -> Vec<TileRecord> {
    tiles.iter().filter(|t| t.contains_crack).cloned().collect()
}

pub fn background_tiles(tiles: &[TileRecord]) -> Vec<TileRecord> {
    tiles.iter().filter(|t| !t.contains_crack).cloned().collect()
}

/// Uniform sample of `n` crack-free tiles without replacement, returned in
/// their original order.
pub fn sample_background_tiles(tiles: &[TileRecord], n: usize, seed: u64) -> Result<Vec<TileRecord>> {
    let population = background_tiles(tiles);
    if n > population.len() {
        bail!(InvalidArgument, "asked for {n} background tiles, only {} available", population.len());
    }
    let mut rng = seeded(derive_seed(seed, "background-sample"));
    let mut picked = rand::seq::index::sample(&mut rng, population.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| population[i].clone()).collect())
}

/// Resize stage of a resize-mode dataset.
pub fn resize_pair(
    image: &RasterImage,
    mask: &BinaryMask,
    target_h: usize,
    target_w: usize,
) -> Result<(RasterImage, BinaryMask)> {
    if !mask.same_extent(image.height(), image.width()) {
        bail!(ShapeMismatch, "image {}x{} vs mask {}x{}", image.height(), image.width(), mask.height(), mask.width());
    }
    Ok((image.resize_bilinear(target_h, target_w)?, mask.resize_bilinear(target_h, target_w)?))
}

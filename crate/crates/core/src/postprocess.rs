//! Crack extension by dilation gated on dark photo pixels.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::raster::{BinaryMask, RasterImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PostprocessParams {
    /// Side of the square structuring element; odd, at least 3.
    pub kernel: usize,
    pub iterations: usize,
    /// Pixels darker than this luminance may be added.
    pub intensity_threshold: u8,
    pub enabled: bool,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self { kernel: 3, iterations: 2, intensity_threshold: 90, enabled: false }
    }
}

impl PostprocessParams {
    pub fn validate(&self) -> Result<()> {
        if self.kernel < 3 || self.kernel.is_multiple_of(2) {
            bail!(InvalidArgument, "dilation kernel {} must be odd and at least 3", self.kernel);
        }
        Ok(())
    }
}

/// One square dilation with radius `r`, done as a row pass then a column pass.
fn dilate_once(src: &[u8], h: usize, w: usize, r: usize) -> Vec<u8> {
    let mut rows = alloc::vec![0u8; h * w];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = line[lo..=hi].iter().copied().max().unwrap_or(0);
        }
    }
    let mut out = alloc::vec![0u8; h * w];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).max().unwrap_or(0);
        }
    }
    out
}

/// `k×k` dilation applied `iterations` times.
pub fn dilate(mask: &BinaryMask, kernel: usize, iterations: usize) -> Result<BinaryMask> {
    if kernel < 3 || kernel.is_multiple_of(2) {
        bail!(InvalidArgument, "dilation kernel {kernel} must be odd and at least 3");
    }
    let (h, w) = (mask.height(), mask.width());
    let mut data = mask.data().to_vec();
    for _ in 0..iterations {
        data = dilate_once(&data, h, w, kernel / 2);
    }
    BinaryMask::new(h, w, data)
}

/// Adds every pixel of the iterated dilation of `pred` whose photo luminance
/// is below `intensity_threshold`; original predictions are always kept.
pub fn dilate_threshold_extend(
    pred: &BinaryMask,
    photo: &RasterImage,
    params: &PostprocessParams,
) -> Result<BinaryMask> {
    params.validate()?;
    if !pred.same_extent(photo.height(), photo.width()) {
        bail!(
            ShapeMismatch,
            "prediction {}x{} vs photo {}x{}",
            pred.height(),
            pred.width(),
            photo.height(),
            photo.width()
        );
    }
    if !params.enabled || params.iterations == 0 {
        return Ok(pred.clone());
    }
    let grown = dilate(pred, params.kernel, params.iterations)?;
    let w = pred.width();
    let data = pred
        .data()
        .iter()
        .zip(grown.data())
        .enumerate()
        .map(|(i, (&orig, &g))| {
            let dark = photo.luminance(i / w, i % w) < params.intensity_threshold;
            orig | (g & dark as u8)
        })
        .collect();
    BinaryMask::new(pred.height(), w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn on(iterations: usize, threshold: u8) -> PostprocessParams {
        PostprocessParams { kernel: 3, iterations, intensity_threshold: threshold, enabled: true }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let mut m = BinaryMask::zeros(5, 5).unwrap();
        m.set(2, 2, true);
        let photo = RasterImage::filled(5, 5, [0, 0, 0]).unwrap();
        assert_eq!(dilate_threshold_extend(&m, &photo, &on(0, 255)).unwrap(), m);
    }

    #[test]
    fn thin_line_thickens_by_one_each_side() {
        let mut m = BinaryMask::zeros(7, 9).unwrap();
        for c in 2..7 {
            m.set(3, c, true);
        }
        let photo = RasterImage::filled(7, 9, [100, 100, 100]).unwrap();
        let out = dilate_threshold_extend(&m, &photo, &on(1, 255)).unwrap();
        for r in 0..7 {
            for c in 0..9 {
                let expect = (2..=4).contains(&r) && (1..=7).contains(&c);
                assert_eq!(out.get(r, c) == 1, expect, "({r},{c})");
            }
        }
    }

    #[test]
    fn gate_decides_whether_a_dark_line_is_absorbed() {
        // Crack prediction on row 5, a painted dark line on row 7, light background.
        let (h, w) = (12, 16);
        let mut pred = BinaryMask::zeros(h, w).unwrap();
        for c in 3..13 {
            pred.set(5, c, true);
        }
        let mut photo = RasterImage::filled(h, w, [200, 200, 200]).unwrap();
        for c in 0..w {
            photo.set_pixel(7, c, [30, 30, 30]);
        }
        let grown = dilate(&pred, 3, 2).unwrap();
        for threshold in [31u8, 30, 200, 201] {
            let out = dilate_threshold_extend(&pred, &photo, &on(2, threshold)).unwrap();
            // pixel-by-pixel gating oracle
            for r in 0..h {
                for c in 0..w {
                    let expect = pred.get(r, c) == 1 || (grown.get(r, c) == 1 && photo.luminance(r, c) < threshold);
                    assert_eq!(out.get(r, c) == 1, expect);
                }
            }
            let absorbed = (3..13).filter(|&c| out.get(7, c) == 1).count();
            assert_eq!(absorbed > 0, threshold > 30, "threshold {threshold}");
        }
    }

    #[test]
    fn disabled_or_invalid_params() {
        let m = BinaryMask::new(1, 3, vec![0, 1, 0]).unwrap();
        let photo = RasterImage::filled(1, 3, [0, 0, 0]).unwrap();
        let off = PostprocessParams { enabled: false, ..on(3, 255) };
        assert_eq!(dilate_threshold_extend(&m, &photo, &off).unwrap(), m);
        let even = PostprocessParams { kernel: 4, ..on(1, 255) };
        assert!(dilate_threshold_extend(&m, &photo, &even).is_err());
        let other = RasterImage::filled(2, 3, [0, 0, 0]).unwrap();
        assert!(dilate_threshold_extend(&m, &other, &on(1, 255)).is_err());
    }

    proptest! {
        #[test]
        fn extension_is_monotone(
            bits in prop::collection::vec(prop::bool::weighted(0.1), 100),
            lum in prop::collection::vec(any::<u8>(), 100),
            threshold in any::<u8>(),
            iterations in 0usize..4,
        ) {
            let pred = BinaryMask::new(10, 10, bits.iter().map(|&b| b as u8).collect()).unwrap();
            let photo = RasterImage::new(10, 10, lum.iter().flat_map(|&v| [v, v, v]).collect()).unwrap();
            let out = dilate_threshold_extend(&pred, &photo, &on(iterations, threshold)).unwrap();
            let more = dilate_threshold_extend(&pred, &photo, &on(iterations + 1, threshold)).unwrap();
            for i in 0..100 {
                prop_assert!(out.data()[i] >= pred.data()[i]);
                prop_assert!(more.data()[i] >= out.data()[i]);
            }
        }
    }
}

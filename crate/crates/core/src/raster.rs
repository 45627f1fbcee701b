//! Pixel grids: RGB photos, binary crack masks and probability maps.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// 8-bit RGB raster, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RasterImage {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            bail!(InvalidExtent, "image extent {height}x{width} is empty");
        }
        if data.len() != height * width * 3 {
            bail!(InvalidExtent, "image {height}x{width} needs {} bytes, got {}", height * width * 3, data.len());
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Luminance `round(0.299R + 0.587G + 0.114B)`.
    #[inline]
    pub fn luminance(&self, row: usize, col: usize) -> u8 {
        let [r, g, b] = self.pixel(row, col);
        luminance(r, g, b)
    }

    /// Copies a window; pixels outside the image read as zero.
    pub fn window(&self, row_off: usize, col_off: usize, h: usize, w: usize) -> RasterImage {
        let mut data = vec![0u8; h * w * 3];
        let rows = h.min(self.height.saturating_sub(row_off));
        let cols = w.min(self.width.saturating_sub(col_off));
        for r in 0..rows {
            let src = ((row_off + r) * self.width + col_off) * 3;
            let dst = r * w * 3;
            data[dst..dst + cols * 3].copy_from_slice(&self.data[src..src + cols * 3]);
        }
        RasterImage { height: h, width: w, data }
    }
}

#[inline]
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    // Integer form of round(0.299R + 0.587G + 0.114B).
    let weighted = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((weighted + 500) / 1000) as u8
}

/// Crack labels: 1 = crack, 0 = defect-free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            bail!(InvalidExtent, "mask extent {height}x{width} is empty");
        }
        if data.len() != height * width {
            bail!(InvalidExtent, "mask {height}x{width} needs {} values, got {}", height * width, data.len());
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            bail!(InvalidArgument, "mask value {v} is not binary");
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    /// `1` where `value > threshold`, else `0`.
    pub fn from_gray(height: usize, width: usize, gray: &[u8], threshold: u8) -> Result<Self> {
        if gray.len() != height * width {
            bail!(InvalidExtent, "gray buffer has {} values for {height}x{width}", gray.len());
        }
        Self::new(height, width, gray.iter().map(|&v| (v > threshold) as u8).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.data[row * self.width + col] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn same_extent(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }

    pub fn window(&self, row_off: usize, col_off: usize, h: usize, w: usize) -> BinaryMask {
        let mut data = vec![0u8; h * w];
        let rows = h.min(self.height.saturating_sub(row_off));
        let cols = w.min(self.width.saturating_sub(col_off));
        for r in 0..rows {
            let src = (row_off + r) * self.width + col_off;
            data[r * w..r * w + cols].copy_from_slice(&self.data[src..src + cols]);
        }
        BinaryMask { height: h, width: w, data }
    }

    /// Serialized grayscale form: 0 background, 255 crack.
    pub fn to_gray(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v * 255).collect()
    }
}

/// Per-pixel crack probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ProbMask {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            bail!(InvalidExtent, "probability map extent {height}x{width} is empty");
        }
        if data.len() != height * width {
            bail!(
                InvalidExtent,
                "probability map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            );
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            bail!(InvalidArgument, "probability {v} outside [0, 1]");
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, p: f32) -> Result<Self> {
        Self::new(height, width, vec![p; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// Crack where the probability is strictly larger than `threshold`.
    pub fn binarize(&self, threshold: f32) -> Result<BinaryMask> {
        if !(0.0..=1.0).contains(&threshold) {
            bail!(InvalidArgument, "threshold {threshold} outside [0, 1]");
        }
        let data = self.data.iter().map(|&p| (p > threshold) as u8).collect();
        BinaryMask::new(self.height, self.width, data)
    }

    /// 8-bit form with `round(p * 255)`, halves rounding up.
    pub fn to_gray(&self) -> Vec<u8> {
        self.data.iter().map(|&p| prob_to_byte(p)).collect()
    }
}

#[inline]
pub fn prob_to_byte(p: f32) -> u8 {
    libm::floor(p as f64 * 255.0 + 0.5).clamp(0.0, 255.0) as u8
}

/// Where one sub-image sits inside a zero-padded frame.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TileRecord {
    pub image_id: String,
    pub row_off: usize,
    pub col_off: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub contains_crack: bool,
    pub touches_padding: bool,
}

impl TileRecord {
    pub fn fits_within(&self, padded_h: usize, padded_w: usize) -> bool {
        self.row_off + self.tile_h <= padded_h && self.col_off + self.tile_w <= padded_w
    }

    #[inline]
    pub fn covers(&self, row: usize, col: usize) -> bool {
        row >= self.row_off
            && row < self.row_off + self.tile_h
            && col >= self.col_off
            && col < self.col_off + self.tile_w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_threshold_is_strict() {
        let m = BinaryMask::from_gray(1, 4, &[0, 127, 128, 255], 127).unwrap();
        assert_eq!(m.data(), &[0, 0, 1, 1]);
    }

    #[test]
    fn gray_values_zero_and_200() {
        let gray = [0u8, 200, 200, 0, 0, 200];
        let m = BinaryMask::from_gray(2, 3, &gray, 127).unwrap();
        for (g, v) in gray.iter().zip(m.data()) {
            assert_eq!(*v, (*g == 200) as u8);
        }
    }

    #[test]
    fn half_probability_serializes_to_128() {
        assert_eq!(prob_to_byte(0.5), 128);
        assert_eq!(prob_to_byte(0.0), 0);
        assert_eq!(prob_to_byte(1.0), 255);
    }

    #[test]
    fn empty_extents_are_rejected() {
        assert!(BinaryMask::new(0, 3, vec![]).is_err());
        assert!(RasterImage::new(2, 0, vec![]).is_err());
        assert!(ProbMask::new(0, 0, vec![]).is_err());
    }

    #[test]
    fn nonbinary_and_out_of_range_values_are_rejected() {
        assert!(BinaryMask::new(1, 2, vec![0, 2]).is_err());
        assert!(ProbMask::new(1, 2, vec![0.2, 1.5]).is_err());
    }

    #[test]
    fn binarize_boundary_is_background() {
        let p = ProbMask::new(1, 3, vec![0.5, 0.51, 0.49]).unwrap();
        assert_eq!(p.binarize(0.5).unwrap().data(), &[0, 1, 0]);
        let pos = ProbMask::new(1, 2, vec![1e-6, 0.3]).unwrap();
        assert_eq!(pos.binarize(0.0).unwrap().data(), &[1, 1]);
    }

    #[test]
    fn luminance_rounds() {
        assert_eq!(luminance(255, 255, 255), 255);
        assert_eq!(luminance(0, 0, 0), 0);
        // 0.299 * 100 = 29.9
        assert_eq!(luminance(100, 0, 0), 30);
    }

    #[test]
    fn window_reads_zero_outside() {
        let img = RasterImage::filled(2, 2, [9, 9, 9]).unwrap();
        let w = img.window(1, 1, 2, 2);
        assert_eq!(w.pixel(0, 0), [9, 9, 9]);
        assert_eq!(w.pixel(1, 1), [0, 0, 0]);
    }
}

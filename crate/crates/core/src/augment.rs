//! Paired image/mask augmentation.
//!
//! Geometric transforms move the image and the mask with one set of sampled
//! parameters; the image is resampled bilinearly, the mask by nearest
//! neighbour so it stays binary. Photometric transforms touch only the image.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{bail, Result};
use crate::raster::{luminance, BinaryMask, RasterImage};
use crate::rng::Rng;

/// Probability of applying each transform; all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AugmentConfig {
    pub horizontal_flip: f64,
    pub vertical_flip: f64,
    pub shift_scale_rotate: f64,
    pub blur: f64,
    pub local_contrast_equalization: f64,
    pub hue_saturation_shift: f64,
    pub perspective: f64,
    pub sharpen: f64,
    pub random_brightness: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            horizontal_flip: 0.5,
            vertical_flip: 0.5,
            shift_scale_rotate: 0.2,
            blur: 0.2,
            local_contrast_equalization: 0.2,
            hue_saturation_shift: 0.2,
            perspective: 0.2,
            sharpen: 0.2,
            random_brightness: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            horizontal_flip: 0.0,
            vertical_flip: 0.0,
            shift_scale_rotate: 0.0,
            blur: 0.0,
            local_contrast_equalization: 0.0,
            hue_saturation_shift: 0.0,
            perspective: 0.0,
            sharpen: 0.0,
            random_brightness: 0.0,
        }
    }

    fn probabilities(&self) -> [(&'static str, f64); 9] {
        [
            ("horizontal_flip", self.horizontal_flip),
            ("vertical_flip", self.vertical_flip),
            ("shift_scale_rotate", self.shift_scale_rotate),
            ("blur", self.blur),
            ("local_contrast_equalization", self.local_contrast_equalization),
            ("hue_saturation_shift", self.hue_saturation_shift),
            ("perspective", self.perspective),
            ("sharpen", self.sharpen),
            ("random_brightness", self.random_brightness),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in self.probabilities() {
            if !(0.0..=1.0).contains(&p) {
                bail!(InvalidArgument, "{name} probability {p} outside [0, 1]");
            }
        }
        Ok(())
    }
}

/// Applies every enabled transform in declaration order, each with its own
/// probability. Randomness comes only from `rng`.
pub fn augment(
    image: &RasterImage,
    mask: &BinaryMask,
    config: &AugmentConfig,
    rng: &mut Rng,
) -> Result<(RasterImage, BinaryMask)> {
    config.validate()?;
    if !mask.same_extent(image.height(), image.width()) {
        bail!(ShapeMismatch, "image {}x{} vs mask {}x{}", image.height(), image.width(), mask.height(), mask.width());
    }
    let mut img = image.clone();
    let mut m = mask.clone();
    if rng.gen_bool(config.horizontal_flip) {
        (img, m) = (hflip_image(&img), hflip_mask(&m));
    }
    if rng.gen_bool(config.vertical_flip) {
        (img, m) = (vflip_image(&img), vflip_mask(&m));
    }
    if rng.gen_bool(config.shift_scale_rotate) {
        let p = SsrParams::sample(rng);
        (img, m) = shift_scale_rotate(&img, &m, &p);
    }
    if rng.gen_bool(config.blur) {
        img = box_blur3(&img);
    }
    if rng.gen_bool(config.local_contrast_equalization) {
        img = local_contrast(&img, 4.0, 8);
    }
    if rng.gen_bool(config.hue_saturation_shift) {
        let hue = rng.gen_range(-20.0..=20.0);
        let sat = rng.gen_range(-0.12..=0.12);
        let val = rng.gen_range(-0.08..=0.08);
        img = hsv_shift(&img, hue, sat, val);
    }
    if rng.gen_bool(config.perspective) {
        let scale = rng.gen_range(0.05..=0.1);
        let jitter: [f64; 8] = core::array::from_fn(|_| rng.gen_range(0.0..=scale));
        (img, m) = perspective(&img, &m, &jitter);
    }
    if rng.gen_bool(config.sharpen) {
        img = sharpen(&img, rng.gen_range(0.2..=0.5));
    }
    if rng.gen_bool(config.random_brightness) {
        img = brightness(&img, rng.gen_range(-0.2..=0.2));
    }
    Ok((img, m))
}

fn remap<T: Copy>(h: usize, w: usize, src: &[T], stride: usize, f: impl Fn(usize, usize) -> usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            let i = f(y, x);
            out.extend_from_slice(&src[i * stride..(i + 1) * stride]);
        }
    }
    out
}

pub fn hflip_image(img: &RasterImage) -> RasterImage {
    let (h, w) = (img.height(), img.width());
    let data = remap(h, w, img.data(), 3, |y, x| y * w + (w - 1 - x));
    RasterImage::new(h, w, data).expect("same extent")
}

pub fn hflip_mask(m: &BinaryMask) -> BinaryMask {
    let (h, w) = (m.height(), m.width());
    BinaryMask::new(h, w, remap(h, w, m.data(), 1, |y, x| y * w + (w - 1 - x))).expect("same extent")
}

pub fn vflip_image(img: &RasterImage) -> RasterImage {
    let (h, w) = (img.height(), img.width());
    let data = remap(h, w, img.data(), 3, |y, x| (h - 1 - y) * w + x);
    RasterImage::new(h, w, data).expect("same extent")
}

pub fn vflip_mask(m: &BinaryMask) -> BinaryMask {
    let (h, w) = (m.height(), m.width());
    BinaryMask::new(h, w, remap(h, w, m.data(), 1, |y, x| (h - 1 - y) * w + x)).expect("same extent")
}

/// Resamples the pair through `source_of`, which maps a destination pixel
/// center to its source coordinate. Outside samples read zero.
fn warp(img: &RasterImage, m: &BinaryMask, source_of: impl Fn(f64, f64) -> (f64, f64)) -> (RasterImage, BinaryMask) {
    let (h, w) = (img.height(), img.width());
    let src = img.data();
    let mut out = vec![0u8; h * w * 3];
    let mut mask = vec![0u8; h * w];
    let fetch = |y: isize, x: isize, ch: usize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            src[(y as usize * w + x as usize) * 3 + ch] as f64
        }
    };
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = source_of(x as f64, y as f64);
            let (nx, ny) = (libm::round(sx), libm::round(sy));
            if nx >= 0.0 && ny >= 0.0 && (nx as usize) < w && (ny as usize) < h {
                mask[y * w + x] = m.get(ny as usize, nx as usize);
            }
            let (x0, y0) = (libm::floor(sx), libm::floor(sy));
            let (tx, ty) = (sx - x0, sy - y0);
            let (xi, yi) = (x0 as isize, y0 as isize);
            for ch in 0..3 {
                let top = fetch(yi, xi, ch) * (1.0 - tx) + fetch(yi, xi + 1, ch) * tx;
                let bot = fetch(yi + 1, xi, ch) * (1.0 - tx) + fetch(yi + 1, xi + 1, ch) * tx;
                out[(y * w + x) * 3 + ch] = libm::round(top * (1.0 - ty) + bot * ty).clamp(0.0, 255.0) as u8;
            }
        }
    }
    (RasterImage::new(h, w, out).expect("same extent"), BinaryMask::new(h, w, mask).expect("binary"))
}

/// Affine jitter: shift as a fraction of the extent, relative scale change,
/// rotation in degrees about the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsrParams {
    pub shift_x: f64,
    pub shift_y: f64,
    pub scale: f64,
    pub rotate_deg: f64,
}

impl SsrParams {
    pub fn sample(rng: &mut Rng) -> Self {
        Self {
            shift_x: rng.gen_range(-0.0625..=0.0625),
            shift_y: rng.gen_range(-0.0625..=0.0625),
            scale: rng.gen_range(-0.1..=0.1),
            rotate_deg: rng.gen_range(-45.0..=45.0),
        }
    }
}

pub fn shift_scale_rotate(img: &RasterImage, m: &BinaryMask, p: &SsrParams) -> (RasterImage, BinaryMask) {
    let (h, w) = (img.height() as f64, img.width() as f64);
    let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let s = (1.0 + p.scale).max(1e-3);
    let (sin, cos) = libm::sincos(p.rotate_deg.to_radians());
    let (tx, ty) = (p.shift_x * w, p.shift_y * h);
    warp(img, m, |x, y| {
        // inverse of: dest = R·s·(src − c) + c + t
        let (dx, dy) = (x - cx - tx, y - cy - ty);
        ((cos * dx + sin * dy) / s + cx, (-sin * dx + cos * dy) / s + cy)
    })
}

/// Solves for the homography taking each `from[i]` to `to[i]`.
pub fn solve_homography(from: &[(f64, f64); 4], to: &[(f64, f64); 4]) -> Option<[f64; 9]> {
    let mut a = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let ((x, y), (u, v)) = (from[i], to[i]);
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut hm = [1.0; 9];
    for i in 0..8 {
        hm[i] = a[i][8] / a[i][i];
    }
    Some(hm)
}

fn apply_homography(hm: &[f64; 9], x: f64, y: f64) -> (f64, f64) {
    let d = hm[6] * x + hm[7] * y + hm[8];
    ((hm[0] * x + hm[1] * y + hm[2]) / d, (hm[3] * x + hm[4] * y + hm[5]) / d)
}

/// Moves each corner inward by `jitter` fractions of the extent (x then y for
/// top-left, top-right, bottom-right, bottom-left) and warps the pair so the
/// full image lands on that quadrilateral.
pub fn perspective(img: &RasterImage, m: &BinaryMask, jitter: &[f64; 8]) -> (RasterImage, BinaryMask) {
    let (w, h) = ((img.width() - 1) as f64, (img.height() - 1) as f64);
    let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let inward = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    let moved: [(f64, f64); 4] = core::array::from_fn(|i| {
        (corners[i].0 + inward[i].0 * jitter[2 * i] * w, corners[i].1 + inward[i].1 * jitter[2 * i + 1] * h)
    });
    match solve_homography(&moved, &corners) {
        Some(hm) => warp(img, m, |x, y| apply_homography(&hm, x, y)),
        None => (img.clone(), m.clone()),
    }
}

fn map_channels(img: &RasterImage, f: impl Fn(usize, usize, usize) -> f64) -> RasterImage {
    let (h, w) = (img.height(), img.width());
    let mut out = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out[(y * w + x) * 3 + ch] = libm::round(f(y, x, ch)).clamp(0.0, 255.0) as u8;
            }
        }
    }
    RasterImage::new(h, w, out).expect("same extent")
}

/// 3×3 mean filter with edge replication.
pub fn box_blur3(img: &RasterImage) -> RasterImage {
    let (h, w) = (img.height(), img.width());
    let src = img.data();
    map_channels(img, |y, x, ch| {
        let mut acc = 0u32;
        for dy in [-1isize, 0, 1] {
            for dx in [-1isize, 0, 1] {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                acc += src[(yy * w + xx) * 3 + ch] as u32;
            }
        }
        acc as f64 / 9.0
    })
}

/// Unsharp masking: `img + amount·(img − blur)`.
pub fn sharpen(img: &RasterImage, amount: f64) -> RasterImage {
    let blurred = box_blur3(img);
    let (a, b) = (img.data(), blurred.data());
    let w = img.width();
    map_channels(img, |y, x, ch| {
        let i = (y * w + x) * 3 + ch;
        a[i] as f64 + amount * (a[i] as f64 - b[i] as f64)
    })
}

/// Adds `delta·255` to every channel.
pub fn brightness(img: &RasterImage, delta: f64) -> RasterImage {
    let w = img.width();
    let a = img.data();
    map_channels(img, |y, x, ch| a[(y * w + x) * 3 + ch] as f64 + delta * 255.0)
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / d) % 6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    ((h + 360.0) % 360.0, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Rotates hue by `hue_deg` and offsets saturation and value (unit scale).
pub fn hsv_shift(img: &RasterImage, hue_deg: f64, sat: f64, val: f64) -> RasterImage {
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(h * w * 3);
    for px in img.data().chunks_exact(3) {
        let (hh, s, v) = rgb_to_hsv(px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0);
        let hh = ((hh + hue_deg) % 360.0 + 360.0) % 360.0;
        let (r, g, b) = hsv_to_rgb(hh, (s + sat).clamp(0.0, 1.0), (v + val).clamp(0.0, 1.0));
        out.extend([r, g, b].map(|c| libm::round(c * 255.0).clamp(0.0, 255.0) as u8));
    }
    RasterImage::new(h, w, out).expect("same extent")
}

/// Contrast-limited adaptive histogram equalization of luminance over a
/// `grid×grid` tiling; colors are scaled by the luminance gain.
pub fn local_contrast(img: &RasterImage, clip_limit: f64, grid: usize) -> RasterImage {
    let (h, w) = (img.height(), img.width());
    let gy = grid.clamp(1, h);
    let gx = grid.clamp(1, w);
    let lum: Vec<u8> = img.data().chunks_exact(3).map(|p| luminance(p[0], p[1], p[2])).collect();
    // One lookup table per tile.
    let mut luts = vec![[0f64; 256]; gy * gx];
    for ty in 0..gy {
        for tx in 0..gx {
            let (y0, y1) = (ty * h / gy, (ty + 1) * h / gy);
            let (x0, x1) = (tx * w / gx, (tx + 1) * w / gx);
            let mut hist = [0f64; 256];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[lum[y * w + x] as usize] += 1.0;
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            let limit = (clip_limit * n / 256.0).max(1.0);
            let mut excess = 0.0;
            for v in hist.iter_mut() {
                if *v > limit {
                    excess += *v - limit;
                    *v = limit;
                }
            }
            let lut = &mut luts[ty * gx + tx];
            let mut cdf = 0.0;
            for (i, v) in hist.iter().enumerate() {
                cdf += v + excess / 256.0;
                lut[i] = 255.0 * cdf / n;
            }
        }
    }
    // Bilinear blend of the four nearest tile tables.
    let axis = |pos: usize, len: usize, tiles: usize| -> (usize, usize, f64) {
        let c = (pos as f64 + 0.5) * tiles as f64 / len as f64 - 0.5;
        if c <= 0.0 {
            return (0, 0, 0.0);
        }
        let lo = (c as usize).min(tiles - 1);
        let hi = (lo + 1).min(tiles - 1);
        (lo, hi, c - lo as f64)
    };
    let src = img.data();
    let mut out = vec![0u8; h * w * 3];
    for y in 0..h {
        let (ya, yb, fy) = axis(y, h, gy);
        for x in 0..w {
            let (xa, xb, fx) = axis(x, w, gx);
            let l = lum[y * w + x] as usize;
            let top = luts[ya * gx + xa][l] * (1.0 - fx) + luts[ya * gx + xb][l] * fx;
            let bot = luts[yb * gx + xa][l] * (1.0 - fx) + luts[yb * gx + xb][l] * fx;
            let target = top * (1.0 - fy) + bot * fy;
            let gain = if l == 0 { 1.0 } else { target / l as f64 };
            for ch in 0..3 {
                let i = (y * w + x) * 3 + ch;
                let v = if l == 0 { target } else { src[i] as f64 * gain };
                out[i] = libm::round(v).clamp(0.0, 255.0) as u8;
            }
        }
    }
    RasterImage::new(h, w, out).expect("same extent")
}

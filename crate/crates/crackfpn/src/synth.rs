//! Synthetic crack photos: textured concrete-like backgrounds with dark
//! polyline cracks and exact masks.

use crackfpn_core::rng::{derive_seed_indexed, seeded, Rng};
use crackfpn_core::{BinaryMask, RasterImage};
use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    /// Chance that an image carries any crack.
    pub crack_prob: f64,
    pub min_thickness: usize,
    pub max_thickness: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { height: 960, width: 1280, crack_prob: 1.0, min_thickness: 3, max_thickness: 6 }
    }
}

pub fn sample_id(index: usize) -> String {
    format!("syn_{index:04}")
}

fn background(p: &SynthParams, rng: &mut Rng) -> (RasterImage, f64) {
    let base = rng.gen_range(120.0..190.0);
    let tint: [f64; 3] = [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(4.0..12.0),
                rng.gen_range(0.005..0.05),
                rng.gen_range(0.005..0.05),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut data = Vec::with_capacity(p.height * p.width * 3);
    for y in 0..p.height {
        for x in 0..p.width {
            let low: f64 = waves.iter().map(|&(a, fy, fx, ph)| a * (fy * y as f64 + fx * x as f64 + ph).sin()).sum();
            let grain = rng.gen_range(-14.0..14.0);
            for t in tint {
                data.push((base + t + low + grain).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    (RasterImage::new(p.height, p.width, data).expect("extent"), base)
}

fn stamp(img: &mut RasterImage, mask: &mut BinaryMask, cy: f64, cx: f64, radius: f64, shade: f64, rng: &mut Rng) {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let r = radius.ceil() as isize;
    let (iy, ix) = (cy.round() as isize, cx.round() as isize);
    for y in iy - r..=iy + r {
        for x in ix - r..=ix + r {
            if y < 0 || x < 0 || y >= h || x >= w {
                continue;
            }
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            if dy * dy + dx * dx > radius * radius {
                continue;
            }
            let (yu, xu) = (y as usize, x as usize);
            if mask.get(yu, xu) == 0 {
                mask.set(yu, xu, true);
                let v = (shade + rng.gen_range(-10.0..10.0)).round().clamp(0.0, 255.0) as u8;
                img.set_pixel(yu, xu, [v, v, v]);
            }
        }
    }
}

fn draw_crack(img: &mut RasterImage, mask: &mut BinaryMask, p: &SynthParams, base: f64, rng: &mut Rng) {
    let (h, w) = (p.height as f64, p.width as f64);
    let thickness = rng.gen_range(p.min_thickness..=p.max_thickness.max(p.min_thickness)) as f64;
    let shade = base * rng.gen_range(0.2..0.4);
    let mut y = rng.gen_range(0.0..h);
    let mut x = rng.gen_range(0.0..w);
    let mut angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let step = (h.min(w) / 6.0).max(4.0);
    for _ in 0..rng.gen_range(5..12) {
        angle += rng.gen_range(-0.6..0.6);
        let len = step * rng.gen_range(0.5..1.5);
        let (ny, nx) = (y + len * angle.sin(), x + len * angle.cos());
        let n = (len * 2.0).ceil() as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            stamp(img, mask, y + t * (ny - y), x + t * (nx - x), thickness / 2.0, shade, rng);
        }
        (y, x) = (ny, nx);
        if !(0.0..h).contains(&y) || !(0.0..w).contains(&x) {
            break;
        }
    }
}

/// Sample `index` of the dataset for `seed`; independent of other samples.
pub fn synthesize_one(p: &SynthParams, seed: u64, index: usize) -> (RasterImage, BinaryMask) {
    let mut rng = seeded(derive_seed_indexed(seed, "synth", &[index as u64]));
    let (mut img, base) = background(p, &mut rng);
    let mut mask = BinaryMask::zeros(p.height, p.width).expect("extent");
    if rng.gen_bool(p.crack_prob.clamp(0.0, 1.0)) {
        for _ in 0..rng.gen_range(1..=2) {
            draw_crack(&mut img, &mut mask, p, base, &mut rng);
        }
    }
    (img, mask)
}

pub fn synthesize(p: &SynthParams, count: usize, seed: u64) -> Vec<(String, RasterImage, BinaryMask)> {
    (0..count)
        .map(|i| {
            let (img, mask) = synthesize_one(p, seed, i);
            (sample_id(i), img, mask)
        })
        .collect()
}

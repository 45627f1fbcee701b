use alloc::vec;

use crate::error::{bail, Result};
use crate::nn::upsample::{lerp, resize_plane, AxisMap};
use crate::raster::{BinaryMask, ProbMask, RasterImage};

/// Bilinear resampling with half-pixel centers to an exact target extent.
pub trait Resample: Sized {
    fn resize_bilinear(&self, target_h: usize, target_w: usize) -> Result<Self>;
}

fn check_target(target_h: usize, target_w: usize) -> Result<()> {
    if target_h == 0 || target_w == 0 {
        bail!(InvalidExtent, "resize target {target_h}x{target_w} is empty");
    }
    Ok(())
}

impl Resample for RasterImage {
    fn resize_bilinear(&self, target_h: usize, target_w: usize) -> Result<Self> {
        check_target(target_h, target_w)?;
        let (h, w) = (self.height(), self.width());
        let rows = AxisMap::new(h, target_h);
        let cols = AxisMap::new(w, target_w);
        let src = self.data();
        let mut out = vec![0u8; target_h * target_w * 3];
        for y in 0..target_h {
            let (r0, r1, ty) = (rows.lo[y] * w, rows.hi[y] * w, rows.frac[y]);
            for x in 0..target_w {
                let (c0, c1, tx) = (cols.lo[x], cols.hi[x], cols.frac[x]);
                for ch in 0..3 {
                    let at = |i: usize| src[i * 3 + ch] as f32;
                    let top = lerp(at(r0 + c0), at(r0 + c1), tx);
                    let bot = lerp(at(r1 + c0), at(r1 + c1), tx);
                    let v = lerp(top, bot, ty);
                    out[(y * target_w + x) * 3 + ch] = libm::floorf(v + 0.5).clamp(0.0, 255.0) as u8;
                }
            }
        }
        RasterImage::new(target_h, target_w, out)
    }
}

impl Resample for ProbMask {
    fn resize_bilinear(&self, target_h: usize, target_w: usize) -> Result<Self> {
        check_target(target_h, target_w)?;
        let rows = AxisMap::new(self.height(), target_h);
        let cols = AxisMap::new(self.width(), target_w);
        let mut out = vec![0.0f32; target_h * target_w];
        resize_plane(self.data(), self.width(), &rows, &cols, &mut out);
        out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        ProbMask::new(target_h, target_w, out)
    }
}

impl Resample for BinaryMask {
    /// Interpolates the 0/1 field, then keeps pixels strictly above 0.5.
    fn resize_bilinear(&self, target_h: usize, target_w: usize) -> Result<Self> {
        check_target(target_h, target_w)?;
        let field: alloc::vec::Vec<f32> = self.data().iter().map(|&v| v as f32).collect();
        let rows = AxisMap::new(self.height(), target_h);
        let cols = AxisMap::new(self.width(), target_w);
        let mut out = vec![0.0f32; target_h * target_w];
        resize_plane(&field, self.width(), &rows, &cols, &mut out);
        BinaryMask::new(target_h, target_w, out.iter().map(|&v| (v > 0.5) as u8).collect())
    }
}

pub fn resize_bilinear<T: Resample>(item: &T, target_h: usize, target_w: usize) -> Result<T> {
    item.resize_bilinear(target_h, target_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng as _;

    #[test]
    fn identity_resize_is_bit_exact() {
        let mut rng = seeded(0);
        let img = RasterImage::new(5, 7, (0..105).map(|_| rng.gen()).collect()).unwrap();
        assert_eq!(img.resize_bilinear(5, 7).unwrap(), img);
        let m = BinaryMask::new(5, 7, (0..35).map(|_| rng.gen_range(0..2)).collect()).unwrap();
        assert_eq!(m.resize_bilinear(5, 7).unwrap(), m);
    }

    #[test]
    fn two_by_two_to_two_by_four() {
        // rows [0,0] and [255,255] per channel; target keeps 2 rows
        let mut img = RasterImage::filled(2, 2, [0, 0, 0]).unwrap();
        img.set_pixel(1, 0, [255, 255, 255]);
        img.set_pixel(1, 1, [255, 255, 255]);
        let out = img.resize_bilinear(2, 4).unwrap();
        // Hand-evaluated kernel: row coordinate maps exactly, column taps
        // blend equal values, so each row is constant.
        for c in 0..4 {
            assert_eq!(out.pixel(0, c), [0, 0, 0]);
            assert_eq!(out.pixel(1, c), [255, 255, 255]);
        }
        // Columns: src = (d + 0.5)/2 - 0.5 → 0, 0.25, 0.75, 1 (clamped)
        let mut ramp = RasterImage::filled(1, 2, [0, 0, 0]).unwrap();
        ramp.set_pixel(0, 1, [200, 100, 40]);
        let out = ramp.resize_bilinear(1, 4).unwrap();
        assert_eq!(out.pixel(0, 0), [0, 0, 0]);
        assert_eq!(out.pixel(0, 1), [50, 25, 10]);
        assert_eq!(out.pixel(0, 2), [150, 75, 30]);
        assert_eq!(out.pixel(0, 3), [200, 100, 40]);
    }

    #[test]
    fn full_resolution_to_ts1_extent() {
        let img = RasterImage::filled(3264, 4928, [10, 20, 30]).unwrap();
        let out = img.resize_bilinear(1600, 2400).unwrap();
        assert_eq!((out.height(), out.width()), (1600, 2400));
        assert_eq!(out.pixel(800, 1200), [10, 20, 30]);
    }

    #[test]
    fn constant_probability_survives_round_trip() {
        let p = ProbMask::filled(30, 40, 0.37).unwrap();
        let down = p.resize_bilinear(12, 16).unwrap();
        let back = down.resize_bilinear(30, 40).unwrap();
        assert!(back.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn empty_target_is_rejected() {
        let m = BinaryMask::zeros(3, 3).unwrap();
        assert!(m.resize_bilinear(0, 3).is_err());
    }
}

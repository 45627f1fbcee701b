//! Bilinear resampling with half-pixel centers.
//!
//! Output pixel `d` samples source coordinate `(d + 0.5)·in/out − 0.5`,
//! clamped to the valid range, and blends the two nearest source pixels on
//! each axis. Blends are written `a + t·(b − a)` so constant fields and
//! same-size resampling reproduce their input exactly.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Source taps and blend weight for every output coordinate of one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisMap {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f32>,
}

impl AxisMap {
    pub fn new(in_len: usize, out_len: usize) -> Self {
        let scale = in_len as f64 / out_len as f64;
        let mut lo = Vec::with_capacity(out_len);
        let mut hi = Vec::with_capacity(out_len);
        let mut frac = Vec::with_capacity(out_len);
        for d in 0..out_len {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            lo.push(i0);
            hi.push(i1);
            frac.push(if i1 == i0 { 0.0 } else { (src - i0 as f64) as f32 });
        }
        Self { lo, hi, frac }
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }
}

#[inline]
pub fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// Resamples one `in_h×in_w` plane into `out` using the given axis maps.
pub fn resize_plane(src: &[f32], in_w: usize, rows: &AxisMap, cols: &AxisMap, out: &mut [f32]) {
    let out_w = cols.len();
    for (y, row_out) in out.chunks_exact_mut(out_w).enumerate() {
        let top = &src[rows.lo[y] * in_w..(rows.lo[y] + 1) * in_w];
        let bot = &src[rows.hi[y] * in_w..(rows.hi[y] + 1) * in_w];
        let ty = rows.frac[y];
        for (x, o) in row_out.iter_mut().enumerate() {
            let (l, r, tx) = (cols.lo[x], cols.hi[x], cols.frac[x]);
            let a = lerp(top[l], top[r], tx);
            let b = lerp(bot[l], bot[r], tx);
            *o = lerp(a, b, ty);
        }
    }
}

/// Adjoint of [`resize_plane`]: scatters output gradients onto source taps.
pub fn resize_plane_backward(grad: &[f32], in_w: usize, rows: &AxisMap, cols: &AxisMap, dsrc: &mut [f32]) {
    let out_w = cols.len();
    for (y, g_row) in grad.chunks_exact(out_w).enumerate() {
        let ty = rows.frac[y];
        let (r0, r1) = (rows.lo[y] * in_w, rows.hi[y] * in_w);
        for (x, &g) in g_row.iter().enumerate() {
            let (l, r, tx) = (cols.lo[x], cols.hi[x], cols.frac[x]);
            let top = g * (1.0 - ty);
            let bot = g * ty;
            dsrc[r0 + l] += top * (1.0 - tx);
            dsrc[r0 + r] += top * tx;
            dsrc[r1 + l] += bot * (1.0 - tx);
            dsrc[r1 + r] += bot * tx;
        }
    }
}

/// Bilinear resize of every plane of `x` to `out_h×out_w`.
pub fn resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        bail!(InvalidExtent, "cannot resize to {out_h}x{out_w}");
    }
    let [n, c, h, w] = x.shape();
    let rows = AxisMap::new(h, out_h);
    let cols = AxisMap::new(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for s in 0..n {
        for ch in 0..c {
            let src = x.plane(s, ch);
            resize_plane(src, w, &rows, &cols, out.plane_mut(s, ch));
        }
    }
    Ok(out)
}

/// Gradient of [`resize`] with respect to its `in_h×in_w` input.
pub fn resize_backward(grad: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let [n, c, out_h, out_w] = grad.shape();
    let rows = AxisMap::new(in_h, out_h);
    let cols = AxisMap::new(in_w, out_w);
    let mut dx = Tensor::zeros([n, c, in_h, in_w]);
    for s in 0..n {
        for ch in 0..c {
            let g = grad.plane(s, ch);
            resize_plane_backward(g, in_w, &rows, &cols, dx.plane_mut(s, ch));
        }
    }
    dx
}

pub fn upsample2x(x: &Tensor) -> Tensor {
    resize(x, x.h() * 2, x.w() * 2).expect("nonzero extent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng as _;

    #[test]
    fn constant_field_stays_constant() {
        for &c in &[0.3f32, -1.7, 0.1, 123.456] {
            let x = Tensor::full([1, 2, 3, 5], c);
            let y = resize(&x, 12, 7).unwrap();
            assert!(y.data().iter().all(|&v| v == c));
        }
    }

    #[test]
    fn same_size_is_bit_exact() {
        let mut rng = seeded(1);
        let x = Tensor::from_vec([1, 1, 4, 6], (0..24).map(|_| rng.gen()).collect()).unwrap();
        assert_eq!(resize(&x, 4, 6).unwrap(), x);
    }

    #[test]
    fn doubling_uses_quarter_weights() {
        // in=2, out=4: src = (d+0.5)/2-0.5 = -0.25, 0.25, 0.75, 1.25
        let m = AxisMap::new(2, 4);
        assert_eq!(m.lo, [0, 0, 0, 1]);
        assert_eq!(m.frac, [0.0, 0.25, 0.75, 0.0]);
        let x = Tensor::from_vec([1, 1, 1, 2], vec![0.0, 4.0]).unwrap();
        assert_eq!(resize(&x, 1, 4).unwrap().data(), &[0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn backward_is_the_adjoint() {
        // <resize(x), g> == <x, resize_backward(g)>
        let mut rng = seeded(2);
        let x = Tensor::from_vec([1, 2, 3, 4], (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let g = Tensor::from_vec([1, 2, 7, 5], (0..70).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let y = resize(&x, 7, 5).unwrap();
        let dx = resize_backward(&g, 3, 4);
        let lhs: f32 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }
}

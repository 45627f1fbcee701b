use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm, Mat};
use super::{he_normal, join, Mode, Param, Parameterized};
use crate::error::{bail, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// 2-D convolution with square kernels, symmetric zero padding and groups.
///
/// Weights are laid out `out × (in/groups) × k × k`. The forward pass lowers
/// each group to a GEMM over an im2col buffer; 1×1 stride-1 kernels skip
/// the lowering and multiply the input planes directly.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<Tensor>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        assert!(groups >= 1 && in_channels.is_multiple_of(groups) && out_channels.is_multiple_of(groups));
        assert!(kernel >= 1 && stride >= 1);
        let cin_g = in_channels / groups;
        let fan_in = cin_g * kernel * kernel;
        let len = out_channels * fan_in;
        let weight = Param::new(vec![out_channels, cin_g, kernel, kernel], he_normal(len, fan_in, rng));
        let bias = bias.then(|| Param::zeros(vec![out_channels]));
        Self { in_channels, out_channels, kernel, stride, padding, groups, weight, bias, cache: None }
    }

    /// 1×1 projection, stride 1, with bias.
    pub fn pointwise(in_channels: usize, out_channels: usize, rng: &mut Rng) -> Self {
        Self::new(in_channels, out_channels, 1, 1, 0, 1, true, rng)
    }

    /// 3×3 "same" convolution, stride 1, with bias.
    pub fn same3x3(in_channels: usize, out_channels: usize, rng: &mut Rng) -> Self {
        Self::new(in_channels, out_channels, 3, 1, 1, 1, true, rng)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel || wp < self.kernel {
            bail!(InvalidExtent, "input {h}x{w} smaller than kernel {}", self.kernel);
        }
        Ok(((hp - self.kernel) / self.stride + 1, (wp - self.kernel) / self.stride + 1))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn col_rows(&self) -> usize {
        self.in_channels / self.groups * self.kernel * self.kernel
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let [n, c, h, w] = x.shape();
        if c != self.in_channels {
            bail!(ShapeMismatch, "conv expects {} input channels, got {c}", self.in_channels);
        }
        let (ho, wo) = self.output_hw(h, w)?;
        let p = ho * wo;
        let k_rows = self.col_rows();
        let cin_g = self.in_channels / self.groups;
        let cout_g = self.out_channels / self.groups;
        let mut out = Tensor::zeros([n, self.out_channels, ho, wo]);
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![0.0; k_rows * p] };
        for s in 0..n {
            let xs = x.sample(s);
            let os = out.sample_mut(s);
            for g in 0..self.groups {
                let wg = &self.weight.value[g * cout_g * k_rows..(g + 1) * cout_g * k_rows];
                let og = &mut os[g * cout_g * p..(g + 1) * cout_g * p];
                let input = &xs[g * cin_g * h * w..(g + 1) * cin_g * h * w];
                let b = if self.is_pointwise() {
                    input
                } else {
                    self.im2col(input, h, w, ho, wo, &mut col);
                    &col
                };
                gemm(cout_g, k_rows, p, Mat::rows(wg, k_rows), Mat::rows(b, p), og, 0.0);
            }
            if let Some(bias) = &self.bias {
                for (o, &b) in bias.value.iter().enumerate() {
                    os[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += b);
                }
            }
        }
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let Some(x) = self.cache.take() else {
            bail!(InvalidArgument, "conv backward without a training forward");
        };
        let [n, _, h, w] = x.shape();
        let (ho, wo) = self.output_hw(h, w)?;
        if grad.shape() != [n, self.out_channels, ho, wo] {
            bail!(ShapeMismatch, "conv grad {:?} does not match output", grad.shape());
        }
        let p = ho * wo;
        let k_rows = self.col_rows();
        let cin_g = self.in_channels / self.groups;
        let cout_g = self.out_channels / self.groups;
        let pointwise = self.is_pointwise();
        let mut dx = Tensor::zeros(x.shape());
        let mut col = if pointwise { Vec::new() } else { vec![0.0; k_rows * p] };
        let mut dcol = if pointwise { Vec::new() } else { vec![0.0; k_rows * p] };
        for s in 0..n {
            let xs = x.sample(s);
            let gs = grad.sample(s);
            let dxs = dx.sample_mut(s);
            for g in 0..self.groups {
                let range = g * cout_g * k_rows..(g + 1) * cout_g * k_rows;
                let gg = &gs[g * cout_g * p..(g + 1) * cout_g * p];
                let input = &xs[g * cin_g * h * w..(g + 1) * cin_g * h * w];
                let b: &[f32] = if pointwise {
                    input
                } else {
                    self.im2col(input, h, w, ho, wo, &mut col);
                    &col
                };
                // dW += dOut · colᵀ
                gemm(
                    cout_g,
                    p,
                    k_rows,
                    Mat::rows(gg, p),
                    Mat::transposed(b, p),
                    &mut self.weight.grad[range.clone()],
                    1.0,
                );
                // dcol = Wᵀ · dOut
                let wg = &self.weight.value[range];
                let dxg = &mut dxs[g * cin_g * h * w..(g + 1) * cin_g * h * w];
                if pointwise {
                    gemm(k_rows, cout_g, p, Mat::transposed(wg, k_rows), Mat::rows(gg, p), dxg, 0.0);
                } else {
                    gemm(k_rows, cout_g, p, Mat::transposed(wg, k_rows), Mat::rows(gg, p), &mut dcol, 0.0);
                    self.col2im(&dcol, h, w, ho, wo, dxg);
                }
            }
            if let Some(bias) = &mut self.bias {
                for (o, db) in bias.grad.iter_mut().enumerate() {
                    *db += gs[o * p..(o + 1) * p].iter().sum::<f32>();
                }
            }
        }
        Ok(dx)
    }

    /// Valid output-column range `[lo, hi)` for kernel offset `k` along an axis of length `len`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let (s, pad) = (self.stride, self.padding);
        // need 0 <= o*s + k - pad < len
        let lo = if pad > k { (pad - k).div_ceil(s) } else { 0 };
        let hi = if len + pad > k { (len + pad - k).div_ceil(s) } else { 0 };
        (lo.min(out_len), hi.min(out_len))
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, ho: usize, wo: usize, col: &mut [f32]) {
        let k = self.kernel;
        let s = self.stride;
        let cin = self.in_channels / self.groups;
        let p = ho * wo;
        for ci in 0..cin {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let (ylo, yhi) = self.valid_range(ky, h, ho);
                for kx in 0..k {
                    let (xlo, xhi) = self.valid_range(kx, w, wo);
                    let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..ho {
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        if oy < ylo || oy >= yhi || xlo >= xhi {
                            dst.fill(0.0);
                            continue;
                        }
                        let iy = oy * s + ky - self.padding;
                        let src = &plane[iy * w..(iy + 1) * w];
                        dst[..xlo].fill(0.0);
                        dst[xhi..].fill(0.0);
                        let ix0 = xlo * s + kx - self.padding;
                        if s == 1 {
                            dst[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for (j, d) in dst[xlo..xhi].iter_mut().enumerate() {
                                *d = src[ix0 + j * s];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [f32]) {
        let k = self.kernel;
        let s = self.stride;
        let cin = self.in_channels / self.groups;
        let p = ho * wo;
        for ci in 0..cin {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let (ylo, yhi) = self.valid_range(ky, h, ho);
                for kx in 0..k {
                    let (xlo, xhi) = self.valid_range(kx, w, wo);
                    if xlo >= xhi {
                        continue;
                    }
                    let row = &col[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in ylo..yhi {
                        let iy = oy * s + ky - self.padding;
                        let dst = &mut plane[iy * w..(iy + 1) * w];
                        let src = &row[oy * wo + xlo..oy * wo + xhi];
                        let ix0 = xlo * s + kx - self.padding;
                        for (j, v) in src.iter().enumerate() {
                            dst[ix0 + j * s] += v;
                        }
                    }
                }
            }
        }
    }
}

impl Parameterized for Conv2d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_layer;
    use crate::rng::seeded;

    /// Direct 7-loop convolution used as the reference.
    fn naive(conv: &Conv2d, x: &Tensor) -> Tensor {
        let [n, _, h, w] = x.shape();
        let (ho, wo) = conv.output_hw(h, w).unwrap();
        let k = conv.kernel;
        let cin_g = conv.in_channels / conv.groups;
        let cout_g = conv.out_channels / conv.groups;
        let mut out = Tensor::zeros([n, conv.out_channels, ho, wo]);
        let [_, oc, oh, ow] = out.shape();
        for s in 0..n {
            for o in 0..conv.out_channels {
                let g = o / cout_g;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[o]);
                        for ci in 0..cin_g {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let wv = conv.weight.value[((o * cin_g + ci) * k + ky) * k + kx];
                                    acc += wv * x.at(s, g * cin_g + ci, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.data_mut()[((s * oc + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_input(shape: [usize; 4], seed: u64) -> Tensor {
        use rand::Rng as _;
        let mut rng = seeded(seed);
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matches_naive_convolution() {
        let cases = [
            (4, 6, 3, 1, 1, 1),
            (4, 8, 3, 2, 1, 2),
            (3, 5, 7, 2, 3, 1),
            (8, 8, 3, 1, 1, 4),
            (6, 4, 1, 1, 0, 1),
            (6, 4, 1, 2, 0, 2),
        ];
        for (i, &(cin, cout, k, s, p, g)) in cases.iter().enumerate() {
            let mut rng = seeded(i as u64);
            let mut conv = Conv2d::new(cin, cout, k, s, p, g, true, &mut rng);
            conv.bias.as_mut().unwrap().value.iter_mut().enumerate().for_each(|(j, b)| *b = j as f32 * 0.1);
            let x = random_input([2, cin, 9, 11], 100 + i as u64);
            let fast = conv.forward(&x, Mode::Eval).unwrap();
            let slow = naive(&conv, &x);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-4, "case {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn identity_pointwise_kernel_passes_input_through() {
        let mut conv = Conv2d::pointwise(3, 3, &mut seeded(0));
        conv.weight.value = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x = random_input([1, 3, 4, 5], 1);
        assert_eq!(conv.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (i, &(cin, cout, k, s, p, g)) in
            [(2, 3, 3, 1, 1, 1), (4, 4, 3, 2, 1, 2), (3, 2, 1, 1, 0, 1)].iter().enumerate()
        {
            let mut conv = Conv2d::new(cin, cout, k, s, p, g, true, &mut seeded(i as u64));
            let x = random_input([2, cin, 5, 6], 7 + i as u64);
            check_layer(&mut conv, &x, |l, x, m| l.forward(x, m).unwrap(), |l, g| l.backward(g).unwrap());
        }
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let mut conv = Conv2d::same3x3(4, 2, &mut seeded(0));
        assert!(conv.forward(&Tensor::zeros([1, 3, 4, 4]), Mode::Eval).is_err());
    }
}

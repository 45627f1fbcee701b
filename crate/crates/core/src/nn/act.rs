use alloc::vec;
use alloc::vec::Vec;

use super::{Mode, Param, Parameterized};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::expf(-x))
    } else {
        let e = libm::expf(x);
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, mut x: Tensor, mode: Mode) -> Tensor {
        if mode == Mode::Train {
            self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        }
        x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        x
    }

    pub fn backward(&mut self, mut grad: Tensor) -> Result<Tensor> {
        let Some(mask) = self.mask.take() else {
            bail!(InvalidArgument, "relu backward without a training forward");
        };
        if mask.len() != grad.data().len() {
            bail!(ShapeMismatch, "relu grad length {} vs {}", grad.data().len(), mask.len());
        }
        for (g, &on) in grad.data_mut().iter_mut().zip(&mask) {
            if !on {
                *g = 0.0;
            }
        }
        Ok(grad)
    }
}

/// 3×3 max pooling, stride 2, padding 1.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2d {
    cache: Option<([usize; 4], Vec<u32>)>,
}

impl MaxPool2d {
    const K: usize = 3;
    const S: usize = 2;
    const P: usize = 1;

    pub fn output_hw(h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * Self::P - Self::K) / Self::S + 1, (w + 2 * Self::P - Self::K) / Self::S + 1)
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let [n, c, h, w] = x.shape();
        let (ho, wo) = Self::output_hw(h, w);
        let mut out = Tensor::zeros([n, c, ho, wo]);
        let mut argmax = vec![0u32; n * c * ho * wo];
        let mut k = 0;
        for s in 0..n {
            for ch in 0..c {
                let plane = x.plane(s, ch);
                let dst = out.plane_mut(s, ch);
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_i = 0usize;
                        for ky in 0..Self::K {
                            let iy = (oy * Self::S + ky) as isize - Self::P as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..Self::K {
                                let ix = (ox * Self::S + kx) as isize - Self::P as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let i = iy as usize * w + ix as usize;
                                if plane[i] > best {
                                    best = plane[i];
                                    best_i = i;
                                }
                            }
                        }
                        dst[oy * wo + ox] = best;
                        argmax[k] = best_i as u32;
                        k += 1;
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.cache = Some((x.shape(), argmax));
        }
        out
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let Some((shape, argmax)) = self.cache.take() else {
            bail!(InvalidArgument, "max pool backward without a training forward");
        };
        let [n, c, _, _] = shape;
        let mut dx = Tensor::zeros(shape);
        let plane_out = grad.plane_len();
        for s in 0..n {
            for ch in 0..c {
                let g = grad.plane(s, ch);
                let base = (s * c + ch) * plane_out;
                let d = dx.plane_mut(s, ch);
                for (j, &gv) in g.iter().enumerate() {
                    d[argmax[base + j] as usize] += gv;
                }
            }
        }
        Ok(dx)
    }
}

impl Parameterized for MaxPool2d {
    fn visit_params(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
}

impl Parameterized for Relu {
    fn visit_params(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
}

use alloc::vec;
use alloc::vec::Vec;

use super::{join, Mode, Param, Parameterized};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

const EPS: f32 = 1e-5;
const MOMENTUM: f32 = 0.1;

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(vec![channels], vec![1.0; channels]),
            beta: Param::zeros(vec![channels]),
            running_mean: Param::buffer(vec![channels], vec![0.0; channels]),
            running_var: Param::buffer(vec![channels], vec![1.0; channels]),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let [n, c, _, _] = x.shape();
        if c != self.channels() {
            bail!(ShapeMismatch, "batch norm over {} channels got {c}", self.channels());
        }
        let mut out = Tensor::zeros(x.shape());
        match mode {
            Mode::Eval => {
                for ch in 0..c {
                    let inv = 1.0 / libm::sqrtf(self.running_var.value[ch] + EPS);
                    let scale = self.gamma.value[ch] * inv;
                    let shift = self.beta.value[ch] - self.running_mean.value[ch] * scale;
                    for s in 0..n {
                        let src = x.plane(s, ch);
                        for (o, &v) in out.plane_mut(s, ch).iter_mut().zip(src) {
                            *o = v * scale + shift;
                        }
                    }
                }
            }
            Mode::Train => {
                let m = (n * x.plane_len()) as f64;
                let mut xhat = Tensor::zeros(x.shape());
                let mut inv_std = vec![0.0f32; c];
                for ch in 0..c {
                    let mut sum = 0.0f64;
                    let mut sq = 0.0f64;
                    for s in 0..n {
                        for &v in x.plane(s, ch) {
                            sum += v as f64;
                            sq += v as f64 * v as f64;
                        }
                    }
                    let mean = sum / m;
                    let var = (sq / m - mean * mean).max(0.0);
                    let inv = 1.0 / libm::sqrt(var + EPS as f64);
                    inv_std[ch] = inv as f32;
                    let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                    for s in 0..n {
                        let src = x.plane(s, ch);
                        let xh = xhat.plane_mut(s, ch);
                        for (h, &v) in xh.iter_mut().zip(src) {
                            *h = ((v as f64 - mean) * inv) as f32;
                        }
                        for (o, &h) in out.plane_mut(s, ch).iter_mut().zip(xhat.plane(s, ch)) {
                            *o = g * h + b;
                        }
                    }
                    let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                    let rm = &mut self.running_mean.value[ch];
                    *rm = (1.0 - MOMENTUM) * *rm + MOMENTUM * mean as f32;
                    let rv = &mut self.running_var.value[ch];
                    *rv = (1.0 - MOMENTUM) * *rv + MOMENTUM * unbiased as f32;
                }
                self.cache = Some((xhat, inv_std));
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let Some((xhat, inv_std)) = self.cache.take() else {
            bail!(InvalidArgument, "batch norm backward without a training forward");
        };
        if grad.shape() != xhat.shape() {
            bail!(ShapeMismatch, "batch norm grad {:?} vs {:?}", grad.shape(), xhat.shape());
        }
        let [n, c, _, _] = grad.shape();
        let m = (n * grad.plane_len()) as f32;
        let mut dx = Tensor::zeros(grad.shape());
        for ch in 0..c {
            let mut dgamma = 0.0f64;
            let mut dbeta = 0.0f64;
            for s in 0..n {
                for (&g, &h) in grad.plane(s, ch).iter().zip(xhat.plane(s, ch)) {
                    dgamma += (g * h) as f64;
                    dbeta += g as f64;
                }
            }
            self.gamma.grad[ch] += dgamma as f32;
            self.beta.grad[ch] += dbeta as f32;
            let k = self.gamma.value[ch] * inv_std[ch] / m;
            let (dg, db) = (dgamma as f32, dbeta as f32);
            for s in 0..n {
                let gp = grad.plane(s, ch);
                let hp = xhat.plane(s, ch);
                for ((d, &g), &h) in dx.plane_mut(s, ch).iter_mut().zip(gp).zip(hp) {
                    *d = k * (m * g - db - h * dg);
                }
            }
        }
        Ok(dx)
    }
}

impl Parameterized for BatchNorm2d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.gamma);
        f(&join(prefix, "bias"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

use alloc::vec;

use super::{he_normal, join, Mode, Param, Parameterized};
use crate::error::{bail, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Fully connected layer on `N×F×1×1` tensors.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::new(
                vec![out_features, in_features],
                he_normal(in_features * out_features, in_features, rng),
            ),
            bias: Param::zeros(vec![out_features]),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let [n, f, h, w] = x.shape();
        if f != self.in_features || h != 1 || w != 1 {
            bail!(ShapeMismatch, "linear expects N×{}×1×1, got {:?}", self.in_features, x.shape());
        }
        let mut out = Tensor::zeros([n, self.out_features, 1, 1]);
        for s in 0..n {
            let xs = x.sample(s);
            let os = out.sample_mut(s);
            for (o, y) in os.iter_mut().enumerate() {
                let row = &self.weight.value[o * f..(o + 1) * f];
                *y = self.bias.value[o] + row.iter().zip(xs).map(|(a, b)| a * b).sum::<f32>();
            }
        }
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let Some(x) = self.cache.take() else {
            bail!(InvalidArgument, "linear backward without a training forward");
        };
        let n = x.n();
        let f = self.in_features;
        let mut dx = Tensor::zeros(x.shape());
        for s in 0..n {
            let xs = x.sample(s);
            let gs = grad.sample(s);
            let dxs = dx.sample_mut(s);
            for (o, &g) in gs.iter().enumerate() {
                self.bias.grad[o] += g;
                let wrow = &self.weight.value[o * f..(o + 1) * f];
                let grow = &mut self.weight.grad[o * f..(o + 1) * f];
                for i in 0..f {
                    grow[i] += g * xs[i];
                    dxs[i] += g * wrow[i];
                }
            }
        }
        Ok(dx)
    }
}

impl Parameterized for Linear {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

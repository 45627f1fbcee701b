use alloc::vec::Vec;

use super::act::{sigmoid, Relu};
use super::linear::Linear;
use super::{join, Mode, Param, Parameterized};
use crate::error::{bail, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Squeeze-and-excitation channel gate.
///
/// Global average pooling gives one descriptor per channel; a two-layer
/// bottleneck (`C → C/r → C`, ReLU then sigmoid) turns it into per-channel
/// weights in `(0, 1)` that rescale the input.
#[derive(Debug, Clone)]
pub struct SeBlock {
    pub reduce: Linear,
    pub expand: Linear,
    relu: Relu,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl SeBlock {
    pub fn new(channels: usize, reduction: usize, rng: &mut Rng) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            bail!(InvalidArgument, "{channels} channels are not divisible by reduction {reduction}");
        }
        let hidden = channels / reduction;
        Ok(Self {
            reduce: Linear::new(channels, hidden, rng),
            expand: Linear::new(hidden, channels, rng),
            relu: Relu::default(),
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.reduce.in_features
    }

    /// Global average pool, `N×C×H×W → N×C×1×1`.
    pub fn squeeze(x: &Tensor) -> Tensor {
        let [n, c, _, _] = x.shape();
        let mut pooled = Tensor::zeros([n, c, 1, 1]);
        let area = x.plane_len() as f64;
        for s in 0..n {
            for ch in 0..c {
                let sum: f64 = x.plane(s, ch).iter().map(|&v| v as f64).sum();
                pooled.data_mut()[s * c + ch] = (sum / area) as f32;
            }
        }
        pooled
    }

    /// Per-channel gate values for `x`.
    pub fn gates(&mut self, x: &Tensor, mode: Mode) -> Result<Vec<f32>> {
        let pooled = Self::squeeze(x);
        let hidden = self.relu.forward(self.reduce.forward(&pooled, mode)?, mode);
        let logits = self.expand.forward(&hidden, mode)?;
        Ok(logits.data().iter().map(|&v| sigmoid(v)).collect())
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if x.c() != self.channels() {
            bail!(ShapeMismatch, "SE block over {} channels got {}", self.channels(), x.c());
        }
        let gates = self.gates(x, mode)?;
        let mut out = x.clone();
        let [n, c, _, _] = x.shape();
        for s in 0..n {
            for ch in 0..c {
                let g = gates[s * c + ch];
                out.plane_mut(s, ch).iter_mut().for_each(|v| *v *= g);
            }
        }
        if mode == Mode::Train {
            self.cache = Some((x.clone(), gates));
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let Some((x, gates)) = self.cache.take() else {
            bail!(InvalidArgument, "SE backward without a training forward");
        };
        let [n, c, _, _] = x.shape();
        let mut dx = grad.clone();
        let mut dlogit = Tensor::zeros([n, c, 1, 1]);
        for s in 0..n {
            for ch in 0..c {
                let g = gates[s * c + ch];
                let dg: f64 = grad.plane(s, ch).iter().zip(x.plane(s, ch)).map(|(&a, &b)| a as f64 * b as f64).sum();
                dlogit.data_mut()[s * c + ch] = dg as f32 * g * (1.0 - g);
                dx.plane_mut(s, ch).iter_mut().for_each(|v| *v *= g);
            }
        }
        let dhidden = self.relu.backward(self.expand.backward(&dlogit)?)?;
        let dpooled = self.reduce.backward(&dhidden)?;
        let area = x.plane_len() as f32;
        for s in 0..n {
            for ch in 0..c {
                let d = dpooled.data()[s * c + ch] / area;
                dx.plane_mut(s, ch).iter_mut().for_each(|v| *v += d);
            }
        }
        Ok(dx)
    }
}

impl Parameterized for SeBlock {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.reduce.visit_params(&join(prefix, "fc1"), f);
        self.expand.visit_params(&join(prefix, "fc2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_layer;
    use crate::rng::seeded;
    use rand::Rng as _;

    #[test]
    fn zero_input_gives_zero_output() {
        let mut se = SeBlock::new(8, 4, &mut seeded(1)).unwrap();
        let y = se.forward(&Tensor::zeros([2, 8, 3, 3]), Mode::Eval).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gate_is_identity() {
        let mut se = SeBlock::new(8, 2, &mut seeded(2)).unwrap();
        se.expand.weight.value.iter_mut().for_each(|w| *w = 0.0);
        se.expand.bias.value.iter_mut().for_each(|b| *b = 100.0);
        let mut rng = seeded(3);
        let x = Tensor::from_vec([1, 8, 4, 4], (0..128).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        assert_eq!(se.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn squeeze_of_constant_channels_is_that_constant() {
        let mut data = Vec::new();
        for ch in 0..3 {
            data.extend(std::iter::repeat_n(ch as f32 * 1.5 - 1.0, 20));
        }
        let x = Tensor::from_vec([1, 3, 4, 5], data).unwrap();
        let pooled = SeBlock::squeeze(&x);
        assert_eq!(pooled.data(), &[-1.0, 0.5, 2.0]);
    }

    #[test]
    fn gates_lie_strictly_inside_unit_interval() {
        let mut se = SeBlock::new(16, 4, &mut seeded(5)).unwrap();
        let mut rng = seeded(6);
        let x = Tensor::from_vec([2, 16, 3, 3], (0..288).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        for g in se.gates(&x, Mode::Eval).unwrap() {
            assert!(g > 0.0 && g < 1.0);
        }
    }

    #[test]
    fn indivisible_reduction_is_rejected() {
        assert!(SeBlock::new(10, 4, &mut seeded(0)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut se = SeBlock::new(4, 2, &mut seeded(8)).unwrap();
        let mut rng = seeded(9);
        let x = Tensor::from_vec([2, 4, 3, 3], (0..72).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        check_layer(&mut se, &x, |l, x, m| l.forward(x, m).unwrap(), |l, g| l.backward(g).unwrap());
    }
}

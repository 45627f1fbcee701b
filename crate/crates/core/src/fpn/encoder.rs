//! Bottom-up encoders producing the four pyramid levels at strides 4 to 32.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::nn::{join, BatchNorm2d, Conv2d, MaxPool2d, Mode, Param, Parameterized, Relu, SeBlock};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EncoderKind {
    /// Four single-block stages with SE gates; desk-scale widths.
    Tiny,
    /// SE-ResNeXt-50 with 32 groups of width 4.
    SeResnext50_32x4d,
}

#[derive(Debug, Clone)]
enum Unit {
    Conv(Conv2d),
    Norm(BatchNorm2d),
    Relu(Relu),
    Pool(MaxPool2d),
    Se(SeBlock),
}

impl Unit {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Unit::Conv(l) => l.forward(&x, mode),
            Unit::Norm(l) => l.forward(&x, mode),
            Unit::Relu(l) => Ok(l.forward(x, mode)),
            Unit::Pool(l) => Ok(l.forward(&x, mode)),
            Unit::Se(l) => l.forward(&x, mode),
        }
    }

    fn backward(&mut self, g: Tensor) -> Result<Tensor> {
        match self {
            Unit::Conv(l) => l.backward(&g),
            Unit::Norm(l) => l.backward(&g),
            Unit::Relu(l) => l.backward(g),
            Unit::Pool(l) => l.backward(&g),
            Unit::Se(l) => l.backward(&g),
        }
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            Unit::Conv(l) => l.visit_params(prefix, f),
            Unit::Norm(l) => l.visit_params(prefix, f),
            Unit::Se(l) => l.visit_params(prefix, f),
            Unit::Relu(_) | Unit::Pool(_) => {}
        }
    }
}

/// A named chain of units run in order.
#[derive(Debug, Clone, Default)]
struct Chain {
    units: Vec<(String, Unit)>,
}

impl Chain {
    fn push(mut self, name: &str, unit: Unit) -> Self {
        self.units.push((String::from(name), unit));
        self
    }

    fn forward(&mut self, mut x: Tensor, mode: Mode) -> Result<Tensor> {
        for (_, u) in &mut self.units {
            x = u.forward(x, mode)?;
        }
        Ok(x)
    }

    fn backward(&mut self, mut g: Tensor) -> Result<Tensor> {
        for (_, u) in self.units.iter_mut().rev() {
            g = u.backward(g)?;
        }
        Ok(g)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (name, u) in &mut self.units {
            u.visit(&join(prefix, name), f);
        }
    }
}

/// Residual block: `relu(body(x) + shortcut(x))`.
#[derive(Debug, Clone)]
struct Block {
    body: Chain,
    shortcut: Option<Chain>,
    out: Relu,
}

impl Block {
    /// Two 3×3 convolutions with an SE gate on the residual branch.
    fn basic(cin: usize, cout: usize, stride: usize, reduction: usize, rng: &mut Rng) -> Result<Self> {
        let body = Chain::default()
            .push("conv1", Unit::Conv(Conv2d::new(cin, cout, 3, stride, 1, 1, false, rng)))
            .push("bn1", Unit::Norm(BatchNorm2d::new(cout)))
            .push("relu1", Unit::Relu(Relu::default()))
            .push("conv2", Unit::Conv(Conv2d::new(cout, cout, 3, 1, 1, 1, false, rng)))
            .push("bn2", Unit::Norm(BatchNorm2d::new(cout)))
            .push("se", Unit::Se(SeBlock::new(cout, reduction, rng)?));
        Ok(Self { body, shortcut: projection(cin, cout, stride, rng), out: Relu::default() })
    }

    /// 1×1 → grouped 3×3 → 1×1 bottleneck with an SE gate.
    fn bottleneck(
        cin: usize,
        width: usize,
        cout: usize,
        stride: usize,
        groups: usize,
        reduction: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let body = Chain::default()
            .push("conv1", Unit::Conv(Conv2d::new(cin, width, 1, 1, 0, 1, false, rng)))
            .push("bn1", Unit::Norm(BatchNorm2d::new(width)))
            .push("relu1", Unit::Relu(Relu::default()))
            .push("conv2", Unit::Conv(Conv2d::new(width, width, 3, stride, 1, groups, false, rng)))
            .push("bn2", Unit::Norm(BatchNorm2d::new(width)))
            .push("relu2", Unit::Relu(Relu::default()))
            .push("conv3", Unit::Conv(Conv2d::new(width, cout, 1, 1, 0, 1, false, rng)))
            .push("bn3", Unit::Norm(BatchNorm2d::new(cout)))
            .push("se", Unit::Se(SeBlock::new(cout, reduction, rng)?));
        Ok(Self { body, shortcut: projection(cin, cout, stride, rng), out: Relu::default() })
    }

    fn forward(&mut self, x: Tensor, mode: Mode) -> Result<Tensor> {
        let skip = match &mut self.shortcut {
            Some(s) => s.forward(x.clone(), mode)?,
            None => x.clone(),
        };
        let mut y = self.body.forward(x, mode)?;
        y.add_assign(&skip)?;
        Ok(self.out.forward(y, mode))
    }

    fn backward(&mut self, g: Tensor) -> Result<Tensor> {
        let g = self.out.backward(g)?;
        let mut dx = self.body.backward(g.clone())?;
        let dskip = match &mut self.shortcut {
            Some(s) => s.backward(g)?,
            None => g,
        };
        dx.add_assign(&dskip)?;
        Ok(dx)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.body.visit(prefix, f);
        if let Some(s) = &mut self.shortcut {
            s.visit(&join(prefix, "downsample"), f);
        }
    }
}

fn projection(cin: usize, cout: usize, stride: usize, rng: &mut Rng) -> Option<Chain> {
    (stride != 1 || cin != cout).then(|| {
        Chain::default()
            .push("conv", Unit::Conv(Conv2d::new(cin, cout, 1, stride, 0, 1, false, rng)))
            .push("bn", Unit::Norm(BatchNorm2d::new(cout)))
    })
}

/// Stem plus four stages; stage `i` emits level `C(i+2)` at stride `2^(i+2)`.
#[derive(Debug, Clone)]
pub struct Encoder {
    kind: EncoderKind,
    widths: [usize; 4],
    stem: Chain,
    stages: [Vec<Block>; 4],
}

const TINY_STEM_WIDTH: usize = 16;
const RESNEXT_GROUPS: usize = 32;
const RESNEXT_BASE_WIDTH: usize = 4;
const RESNEXT_DEPTHS: [usize; 4] = [3, 4, 6, 3];

impl Encoder {
    pub fn new(kind: EncoderKind, widths: [usize; 4], reduction: usize, rng: &mut Rng) -> Result<Self> {
        match kind {
            EncoderKind::Tiny => {
                let stem = Chain::default()
                    .push("conv1", Unit::Conv(Conv2d::new(3, TINY_STEM_WIDTH, 3, 2, 1, 1, false, rng)))
                    .push("bn1", Unit::Norm(BatchNorm2d::new(TINY_STEM_WIDTH)))
                    .push("relu", Unit::Relu(Relu::default()));
                let mut cin = TINY_STEM_WIDTH;
                let mut stages: [Vec<Block>; 4] = Default::default();
                for (stage, &w) in stages.iter_mut().zip(&widths) {
                    stage.push(Block::basic(cin, w, 2, reduction, rng)?);
                    cin = w;
                }
                Ok(Self { kind, widths, stem, stages })
            }
            EncoderKind::SeResnext50_32x4d => {
                let stem = Chain::default()
                    .push("conv1", Unit::Conv(Conv2d::new(3, 64, 7, 2, 3, 1, false, rng)))
                    .push("bn1", Unit::Norm(BatchNorm2d::new(64)))
                    .push("relu", Unit::Relu(Relu::default()))
                    .push("pool", Unit::Pool(MaxPool2d::default()));
                let mut cin = 64;
                let mut stages: [Vec<Block>; 4] = Default::default();
                for (i, stage) in stages.iter_mut().enumerate() {
                    let cout = widths[i];
                    // planes = cout / 4; width = planes * base_width / 64 * groups
                    let planes = cout / 4;
                    let width = planes * RESNEXT_BASE_WIDTH / 64 * RESNEXT_GROUPS;
                    for b in 0..RESNEXT_DEPTHS[i] {
                        let stride = if b == 0 && i > 0 { 2 } else { 1 };
                        stage.push(Block::bottleneck(cin, width, cout, stride, RESNEXT_GROUPS, reduction, rng)?);
                        cin = cout;
                    }
                }
                Ok(Self { kind, widths, stem, stages })
            }
        }
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    /// Runs the encoder on an `N×3×H×W` batch; `H` and `W` must be multiples of 32.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<[Tensor; 4]> {
        let [_, c, h, w] = x.shape();
        if c != 3 {
            bail!(ShapeMismatch, "encoder expects 3 input channels, got {c}");
        }
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            bail!(InvalidExtent, "input {h}x{w} is not a multiple of 32");
        }
        let mut y = self.stem.forward(x.clone(), mode)?;
        let mut levels: Vec<Tensor> = Vec::with_capacity(4);
        for stage in &mut self.stages {
            for block in stage.iter_mut() {
                y = block.forward(y, mode)?;
            }
            levels.push(y.clone());
        }
        Ok(levels.try_into().expect("four stages"))
    }

    /// Backpropagates per-level gradients; returns the input gradient.
    pub fn backward(&mut self, grads: [Tensor; 4]) -> Result<Tensor> {
        let mut carry: Option<Tensor> = None;
        for (stage, g) in self.stages.iter_mut().zip(grads).rev() {
            let mut g = g;
            if let Some(c) = carry.take() {
                g.add_assign(&c)?;
            }
            for block in stage.iter_mut().rev() {
                g = block.backward(g)?;
            }
            carry = Some(g);
        }
        self.stem.backward(carry.expect("four stages"))
    }
}

impl Parameterized for Encoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit(&join(prefix, &format!("layer{}.{b}", i + 1)), f);
            }
        }
    }
}

pub(crate) const TINY_WIDTHS: [usize; 4] = [16, 32, 64, 128];
pub(crate) const RESNEXT_WIDTHS: [usize; 4] = [256, 512, 1024, 2048];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn tiny_levels_follow_stride_table() {
        let mut enc = Encoder::new(EncoderKind::Tiny, TINY_WIDTHS, 4, &mut seeded(0)).unwrap();
        let x = Tensor::zeros([2, 3, 96, 128]);
        let levels = enc.forward(&x, Mode::Eval).unwrap();
        let shapes: Vec<[usize; 4]> = levels.iter().map(|t| t.shape()).collect();
        // H/2^i, W/2^i for i = 2..5
        assert_eq!(shapes, vec![[2, 16, 24, 32], [2, 32, 12, 16], [2, 64, 6, 8], [2, 128, 3, 4]]);
    }

    #[test]
    fn non_multiple_of_32_is_rejected() {
        let mut enc = Encoder::new(EncoderKind::Tiny, TINY_WIDTHS, 4, &mut seeded(0)).unwrap();
        assert!(enc.forward(&Tensor::zeros([1, 3, 100, 128]), Mode::Eval).is_err());
        assert!(enc.forward(&Tensor::zeros([1, 3, 96, 120]), Mode::Eval).is_err());
    }

    #[test]
    fn resnext_channels_and_strides_on_small_input() {
        let mut enc = Encoder::new(EncoderKind::SeResnext50_32x4d, RESNEXT_WIDTHS, 16, &mut seeded(1)).unwrap();
        let levels = enc.forward(&Tensor::zeros([1, 3, 64, 96]), Mode::Eval).unwrap();
        let shapes: Vec<[usize; 4]> = levels.iter().map(|t| t.shape()).collect();
        assert_eq!(shapes, vec![[1, 256, 16, 24], [1, 512, 8, 12], [1, 1024, 4, 6], [1, 2048, 2, 3]]);
    }

    #[test]
    fn resnext_uses_32_groups_of_four() {
        let mut enc = Encoder::new(EncoderKind::SeResnext50_32x4d, RESNEXT_WIDTHS, 16, &mut seeded(1)).unwrap();
        let mut found = vec![];
        enc.visit_params("", &mut |name, p| {
            if name == "layer1.0.conv2.weight" || name == "layer4.2.conv2.weight" {
                found.push(p.shape.clone());
            }
        });
        // 32 groups: 4 channels per group at layer1, 32 at layer4
        assert_eq!(found, vec![vec![128, 4, 3, 3], vec![1024, 32, 3, 3]]);
    }
}

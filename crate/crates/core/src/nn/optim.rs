//! First-order optimizers over [`Parameterized`] models.

use alloc::vec;
use alloc::vec::Vec;

use super::{Param, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    SgdMomentum,
    AdaptiveMoments,
}

/// Optimizer state, one slot per trainable parameter in visit order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f32,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

const MOMENTUM: f32 = 0.9;
const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const EPS: f32 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f32) -> Self {
        Self { kind, learning_rate, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut dyn Parameterized) {
        self.step += 1;
        let t = self.step as i32;
        let lr = self.learning_rate;
        let kind = self.kind;
        let bias1 = 1.0 - libm::powf(BETA1, t as f32);
        let bias2 = 1.0 - libm::powf(BETA2, t as f32);
        let mut slot = 0;
        let (first, second) = (&mut self.first, &mut self.second);
        model.visit_params("", &mut |_, p: &mut Param| {
            if !p.trainable {
                return;
            }
            if first.len() == slot {
                first.push(vec![0.0; p.value.len()]);
                second.push(match kind {
                    OptimizerKind::AdaptiveMoments => vec![0.0; p.value.len()],
                    OptimizerKind::SgdMomentum => Vec::new(),
                });
            }
            let m = &mut first[slot];
            match kind {
                OptimizerKind::SgdMomentum => {
                    for ((w, &g), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()) {
                        *v = MOMENTUM * *v + g;
                        *w -= lr * *v;
                    }
                }
                OptimizerKind::AdaptiveMoments => {
                    let v2 = &mut second[slot];
                    for (((w, &g), m1), m2) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v2.iter_mut()) {
                        *m1 = BETA1 * *m1 + (1.0 - BETA1) * g;
                        *m2 = BETA2 * *m2 + (1.0 - BETA2) * g * g;
                        let mh = *m1 / bias1;
                        let vh = *m2 / bias2;
                        *w -= lr * mh / (libm::sqrtf(vh) + EPS);
                    }
                }
            }
            slot += 1;
        });
    }
}

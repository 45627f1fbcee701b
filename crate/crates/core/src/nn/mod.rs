//! Layers with explicit forward/backward passes.
//!
//! Every layer caches what its backward pass needs when run in
//! [`Mode::Train`] and caches nothing in [`Mode::Eval`]. Backward consumes
//! the cache, accumulates parameter gradients, and returns the gradient with
//! respect to the layer input.

mod act;
mod conv;
mod gemm;
mod linear;
mod norm;
pub mod optim;
mod se;
pub mod upsample;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use act::{sigmoid, MaxPool2d, Relu};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use se::SeBlock;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named array of weights (or a non-trainable buffer such as a running mean).
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self { shape, value, grad, trainable: true }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    pub fn buffer(shape: Vec<usize>, value: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        Self { shape, value, grad: Vec::new(), trainable: false }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything that owns parameters, visited in a fixed, documented order.
pub trait Parameterized {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

/// Fan-in scaled normal initialization, `N(0, 2 / fan_in)`.
pub(crate) fn he_normal(len: usize, fan_in: usize, rng: &mut crate::rng::Rng) -> Vec<f32> {
    use rand::distributions::Distribution;
    let std = libm::sqrtf(2.0 / fan_in as f32);
    let normal = rand_distr::Normal::new(0.0f32, std).expect("positive std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

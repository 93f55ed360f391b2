//! Minimal f32 building blocks for the reference encoder: 1-D convolution,
//! batch normalization, a dense layer and Adam. Every layer has an explicit
//! backward pass; there is no tape.
//!
//! Activations are stored channel-major with the batch folded into the time
//! axis: element `(c, b, t)` lives at `c * (B * L) + b * L + t`.

mod adam;
mod gemm;
mod layers;

pub use adam::Adam;
pub use layers::{BatchNorm1d, BnCache, Conv1d, Linear};

pub(crate) use gemm::matmul;

use serde::{Deserialize, Serialize};

/// A named tensor with its gradient accumulator.
///
/// Buffers (running statistics) are also `Param`s; their `grad` stays empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    #[serde(skip)]
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Param {
            name: name.into(),
            shape,
            value,
            grad,
        }
    }

    pub fn buffer(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        Param {
            grad: Vec::new(),
            ..Param::new(name, shape, value)
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Uniform(-bound, bound) initialization from a seeded stream.
pub(crate) fn uniform_init<R: rand::Rng>(rng: &mut R, n: usize, bound: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

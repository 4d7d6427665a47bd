//! Weight initialization.

use super::Tensor;
use crate::rng::Rng;

/// Truncated normal (|z| <= 2 before scaling), std 0.02 by convention for
/// linear layers and embeddings.
pub fn trunc_normal(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.trunc_normal(std)).collect();
    Tensor::from_vec(data, shape).requires_grad(true)
}

/// Kaiming-style fan-in normal init for conv weights `[O,C,k,k]`.
pub fn kaiming_normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    assert_eq!(shape.len(), 4, "kaiming_normal expects conv weights");
    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
    let std = (2.0 / fan_in).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.normal() * std).collect();
    Tensor::from_vec(data, shape).requires_grad(true)
}

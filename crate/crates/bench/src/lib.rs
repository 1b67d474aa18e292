//! Shared fixtures for the benchmarks.

use affconv::nn::he_uniform;
use affconv::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Inputs of one 3x3 stride-1 layer on `[1, C, s, s]`.
pub struct LayerInputs {
    pub x: Tensor<f32>,
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
    /// Identity encoding jittered by +-0.1 at every output location.
    pub field: Tensor<f32>,
}

pub fn layer_inputs(channels: usize, size: usize, seed: u64) -> LayerInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn([1, channels, size, size], |_| rng.random_range(-1.0..1.0));
    let weight = he_uniform([channels, channels, 3, 3], 0.2, &mut rng);
    let identity = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let field = Tensor::from_fn([1, 6, size, size], |i| identity[i / (size * size)] + rng.random_range(-0.1..0.1));
    LayerInputs {
        x,
        weight,
        bias: Tensor::zeros([channels]),
        field,
    }
}

/// A `[B, 3, r, r]` image batch in `[0, 1)`.
pub fn image_batch(batch: usize, resolution: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([batch, 3, resolution, resolution], |_| rng.random_range(0.0..1.0))
}

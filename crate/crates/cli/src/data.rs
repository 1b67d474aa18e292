//! Mini-batch assembly over in-memory toy samples.

use affconv::{Scalar, Tensor};
use anyhow::Result;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::toyset::ToySample;

/// Epoch-wise shuffled index stream. Reshuffles whenever a pass completes.
#[derive(Clone, Debug)]
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
}

impl Batcher {
    pub fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
        }
    }

    pub fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

pub fn stack<T: Scalar>(
    samples: &[ToySample],
    idx: &[usize],
    field: impl Fn(&ToySample) -> Tensor<f32>,
) -> Result<Tensor<T>> {
    let parts: Vec<Tensor<T>> = idx.iter().map(|&i| field(&samples[i]).cast()).collect();
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    Ok(Tensor::stack_batch(&refs)?)
}

/// Consecutive index chunks for evaluation passes.
pub fn chunks(len: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..len).step_by(size.max(1)).map(move |s| (s..(s + size).min(len)).collect())
}

pub fn images(s: &ToySample) -> Tensor<f32> {
    s.image.clone()
}

pub fn diffuse(s: &ToySample) -> Tensor<f32> {
    s.diffuse.clone()
}

pub fn positions(s: &ToySample) -> Tensor<f32> {
    s.position.to_tensor()
}

pub fn position_masks(s: &ToySample) -> Tensor<f32> {
    s.position.mask_tensor()
}

pub fn poses(s: &ToySample) -> Tensor<f32> {
    Tensor::from_f64([1, 6], &s.meta.pose.to_vec6()).expect("six values")
}

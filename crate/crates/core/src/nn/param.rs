use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Named parameter tensors of one network, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Register a tensor and return its index.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Put every parameter on the tape, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Replace values from another set with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        if other.names != self.names {
            return Err(Error::invalid("params", "parameter names differ"));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::shape("params", dst.shape(), src.shape()));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    pub fn replace(&mut self, i: usize, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.tensors[i].shape() {
            return Err(Error::shape("params", self.tensors[i].shape(), value.shape()));
        }
        self.tensors[i] = value;
        Ok(())
    }
}

/// He-uniform initialisation for a conv weight `[cout, cin, kh, kw]`.
pub fn he_uniform<T: Scalar>(shape: [usize; 4], slope: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    let bound = gain * (3.0 / fan_in).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64(rng.random_range(-bound..bound)))
}

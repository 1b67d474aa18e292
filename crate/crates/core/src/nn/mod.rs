//! Parameters and the plain convolution layer shared by every network.

mod param;

pub use param::{he_uniform, ParamSet};

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Negative slope of the leaky activation used throughout.
pub const LEAKY_SLOPE: f64 = 0.2;

/// How a layer's weights start out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightInit {
    He,
    Zero,
}

/// Standard zero-padded convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: usize,
    pub bias: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init: WeightInit,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let shape = [cout, cin, kernel, kernel];
        let w = match init {
            WeightInit::He => he_uniform(shape, LEAKY_SLOPE, rng),
            WeightInit::Zero => Tensor::zeros(shape.to_vec()),
        };
        let weight = params.push(format!("{name}.weight"), w);
        let bias = params.push(format!("{name}.bias"), Tensor::zeros([cout]));
        Self {
            weight,
            bias,
            kernel,
            stride,
            pad,
        }
    }

    /// `same`-padded layer for odd kernels.
    pub fn same<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self::new(params, name, cin, cout, kernel, stride, kernel / 2, WeightInit::He, rng)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(x, vars[self.weight], Some(vars[self.bias]), self.stride, self.pad)
    }
}

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{he_uniform, ParamSet, LEAKY_SLOPE};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

use super::field::{identity_predictor, predict_affine_field};

/// An affine convolution together with its field predictor. Freshly built
/// layers predict the identity field, so they start out as plain
/// convolutions.
#[derive(Clone, Debug)]
pub struct AffineConvLayer {
    pub weight: usize,
    pub bias: usize,
    pub pred_weight: usize,
    pub pred_bias: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl AffineConvLayer {
    /// `same`-padded layer. Only the host weight draws from `rng`.
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = params.push(
            format!("{name}.weight"),
            he_uniform([cout, cin, kernel, kernel], LEAKY_SLOPE, rng),
        );
        let bias = params.push(format!("{name}.bias"), Tensor::zeros([cout]));
        let (pw, pb) = identity_predictor(cin, kernel);
        let pred_weight = params.push(format!("{name}.field.weight"), pw);
        let pred_bias = params.push(format!("{name}.field.bias"), pb);
        Self {
            weight,
            bias,
            pred_weight,
            pred_bias,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    /// Predict the field from `x`, then convolve with it.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        let field = self.field(tape, vars, x)?;
        tape.affine_conv2d(x, vars[self.weight], Some(vars[self.bias]), field, self.stride, self.pad)
    }

    pub fn field<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        predict_affine_field(
            tape,
            x,
            vars[self.pred_weight],
            vars[self.pred_bias],
            self.stride,
            self.pad,
        )
    }

    /// Number of scalars belonging to the field predictor.
    pub fn predictor_params<T: Scalar>(&self, params: &ParamSet<T>) -> usize {
        params.get(self.pred_weight).numel() + params.get(self.pred_bias).numel()
    }
}

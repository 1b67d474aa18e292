//! Differentiable operations recorded on a [`Tape`].
//!
//! Each op is a method on `Tape`; [`OpKind`] names the registered set so
//! callers (and the gradient checker) can dispatch on a value.

mod conv;
mod elementwise;
mod filter;
mod reduce;
mod resample;
mod stats;

pub use conv::conv_out_size;
pub(crate) use conv::{apply_columns, columns_backward, conv_geometry, ConvGeom};
#[cfg(test)]
pub(crate) use conv::conv2d_naive;
pub use filter::{gaussian_taps, Axis};
pub(crate) use resample::bilinear_taps;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    Abs,
    Square,
    Sqrt,
    Mean,
    Sum,
    ConcatChannels,
    LeakyRelu(f64),
    Sigmoid,
    /// Inputs: `[x, weight]` or `[x, weight, bias]`.
    Conv2d { stride: usize, pad: usize },
    Upsample2x,
    AvgPool(usize),
    GaussianBlur { sigma: f64, radius: usize },
    HorizontalFlip,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::ScalarMul(_) => "scalar-mul",
            OpKind::Abs => "abs",
            OpKind::Square => "square",
            OpKind::Sqrt => "sqrt",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::ConcatChannels => "concat-channel",
            OpKind::LeakyRelu(_) => "leaky-relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::Upsample2x => "bilinear-upsample-2x",
            OpKind::AvgPool(_) => "avgpool",
            OpKind::GaussianBlur { .. } => "gaussian-blur",
            OpKind::HorizontalFlip => "horizontal-flip",
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Run `kind` on `inputs`, recording it when any input requires a gradient.
    pub fn apply(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::invalid(
                    kind.name(),
                    format!("expected {n} inputs, got {}", inputs.len()),
                ))
            }
        };
        match *kind {
            OpKind::Add => arity(2).and_then(|_| self.add(inputs[0], inputs[1])),
            OpKind::Sub => arity(2).and_then(|_| self.sub(inputs[0], inputs[1])),
            OpKind::Mul => arity(2).and_then(|_| self.mul(inputs[0], inputs[1])),
            OpKind::ScalarMul(s) => arity(1).and_then(|_| self.scale(inputs[0], s)),
            OpKind::Abs => arity(1).and_then(|_| self.abs(inputs[0])),
            OpKind::Square => arity(1).and_then(|_| self.square(inputs[0])),
            OpKind::Sqrt => arity(1).and_then(|_| self.sqrt(inputs[0])),
            OpKind::Mean => arity(1).and_then(|_| self.mean(inputs[0])),
            OpKind::Sum => arity(1).and_then(|_| self.sum(inputs[0])),
            OpKind::ConcatChannels => self.concat_channels(inputs),
            OpKind::LeakyRelu(s) => arity(1).and_then(|_| self.leaky_relu(inputs[0], s)),
            OpKind::Sigmoid => arity(1).and_then(|_| self.sigmoid(inputs[0])),
            OpKind::Conv2d { stride, pad } => match inputs {
                [x, w] => self.conv2d(*x, *w, None, stride, pad),
                [x, w, b] => self.conv2d(*x, *w, Some(*b), stride, pad),
                _ => Err(Error::invalid("conv2d", "expected [x, weight] or [x, weight, bias]")),
            },
            OpKind::Upsample2x => arity(1).and_then(|_| self.upsample2x(inputs[0])),
            OpKind::AvgPool(k) => arity(1).and_then(|_| self.avgpool(inputs[0], k)),
            OpKind::GaussianBlur { sigma, radius } => {
                arity(1).and_then(|_| self.gaussian_blur(inputs[0], sigma, radius))
            }
            OpKind::HorizontalFlip => arity(1).and_then(|_| self.flip_h(inputs[0])),
        }
    }
}

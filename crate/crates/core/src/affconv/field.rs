use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

use super::grid::{matrix_from_encoding, AffineMatrix, IDENTITY_ENCODING};

/// Per-location affine encodings `[B, 6, H, W]`, channels `(a, b, c, d, tx, ty)`.
#[derive(Clone, PartialEq)]
pub struct AffineField<T>(Tensor<T>);

impl<T: Scalar> std::fmt::Debug for AffineField<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("AffineField").field(&self.0).finish()
    }
}

impl<T: Scalar> AffineField<T> {
    pub fn new(params: Tensor<T>) -> Result<Self> {
        let s = params.shape();
        if s.len() != 4 || s[1] != 6 {
            return Err(Error::invalid(
                "affine-field",
                format!("expected [B, 6, H, W], got {s:?}"),
            ));
        }
        if !params.all_finite() {
            return Err(Error::NonFinite { op: "affine-field" });
        }
        Ok(Self(params))
    }

    /// The same encoding at every location.
    pub fn constant(batch: usize, h: usize, w: usize, e: [f64; 6]) -> Self {
        let plane = h * w;
        Self(Tensor::from_fn([batch, 6, h, w], |i| T::from_f64(e[(i / plane) % 6])))
    }

    pub fn identity(batch: usize, h: usize, w: usize) -> Self {
        Self::constant(batch, h, w, IDENTITY_ENCODING)
    }

    pub fn encoding_at(&self, b: usize, y: usize, x: usize) -> [f64; 6] {
        let s = self.0.shape();
        let (h, w) = (s[2], s[3]);
        std::array::from_fn(|c| self.0.data()[((b * 6 + c) * h + y) * w + x].to_f64())
    }

    pub fn matrix_at(&self, b: usize, y: usize, x: usize) -> AffineMatrix {
        matrix_from_encoding(self.encoding_at(b, y, x))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

/// Predict the field from the same windows the host convolution reads:
/// a `k x k` convolution with six output channels sharing the host's
/// stride and padding.
pub fn predict_affine_field<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    weight: Var,
    bias: Var,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let ws = tape.shape(weight);
    if ws.len() != 4 || ws[0] != 6 {
        return Err(Error::invalid(
            "predict-affine-field",
            format!("predictor weight must be [6, Cin, k, k], got {ws:?}"),
        ));
    }
    tape.conv2d(features, weight, Some(bias), stride, pad)
}

/// Predictor parameters that yield the identity field for any input.
pub fn identity_predictor<T: Scalar>(cin: usize, k: usize) -> (Tensor<T>, Tensor<T>) {
    (
        Tensor::zeros([6, cin, k, k]),
        Tensor::from_f64([6], &IDENTITY_ENCODING).expect("six values"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_predictor_gives_identity_field() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([2, 3, 8, 8], |i| (i as f64 * 0.37).sin()));
        let (w, b) = identity_predictor::<f64>(3, 3);
        let (w, b) = (tape.leaf(w), tape.leaf(b));
        let f = predict_affine_field(&mut tape, x, w, b, 2, 1).unwrap();
        assert_eq!(tape.shape(f), &[2, 6, 4, 4]);
        let field = AffineField::new(tape.value(f).clone()).unwrap();
        assert_eq!(field, AffineField::identity(2, 4, 4));
        assert_eq!(field.encoding_at(1, 3, 2), IDENTITY_ENCODING);
    }

    #[test]
    fn predictor_must_have_six_channels() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([1, 2, 4, 4]));
        let w = tape.constant(Tensor::zeros([5, 2, 3, 3]));
        let b = tape.constant(Tensor::zeros([5]));
        assert!(predict_affine_field(&mut tape, x, w, b, 1, 1).is_err());
        let w = tape.constant(Tensor::zeros([6, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros([6]));
        assert!(predict_affine_field(&mut tape, x, w, b, 1, 1).is_err());
    }
}

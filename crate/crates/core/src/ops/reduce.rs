use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

impl<T: Scalar> Tape<T> {
    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.record("sum", &[x], out, |ctx| {
            let g = ctx.grad.data()[0];
            vec![Some(Tensor::full(ctx.inputs[0].shape().to_vec(), g))]
        })
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = T::from_f64(v.numel() as f64);
        let out = Tensor::scalar(v.sum() / n);
        self.record("mean", &[x], out, move |ctx| {
            let g = ctx.grad.data()[0] / n;
            vec![Some(Tensor::full(ctx.inputs[0].shape().to_vec(), g))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_ones() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones([2, 3]));
        let m = tape.mean(x).unwrap();
        assert_eq!(tape.value(m).item().unwrap(), 1.0);
        assert!(tape.value(m).shape().is_empty());
    }
}

use crate::error::Result;
use crate::networks::MultiScaleDiscriminators;
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

/// Probability clamp inside the logarithms.
pub const BCE_EPS: f64 = 1e-7;

/// `lambda * sum_k 0.5 * (BCE(D_k(real), 1) + BCE(D_k(fake), 0))`.
///
/// The discriminator vars are trainable leaves bound by the caller; `fake`
/// should be a constant so no gradient reaches the generator.
pub fn discriminator_loss<T: Scalar>(
    tape: &mut Tape<T>,
    discs: &MultiScaleDiscriminators<T>,
    vars: &[Vec<Var>; 3],
    real: Var,
    fake: Var,
    lambda: f64,
) -> Result<Var> {
    let real_logits = discs.forward(tape, vars, real)?;
    let fake_logits = discs.forward(tape, vars, fake)?;
    let mut total: Option<Var> = None;
    for (r, f) in real_logits.into_iter().zip(fake_logits) {
        let lr = tape.bce_with_logits(r, 1.0, BCE_EPS)?;
        let lf = tape.bce_with_logits(f, 0.0, BCE_EPS)?;
        let s = tape.add(lr, lf)?;
        let s = tape.scale(s, 0.5)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    tape.scale(total.expect("three scales"), lambda)
}

/// Non-saturating generator objective `lambda * sum_k BCE(D_k(fake), 1)`.
/// Discriminator weights enter as constants.
pub fn generator_loss<T: Scalar>(
    tape: &mut Tape<T>,
    discs: &MultiScaleDiscriminators<T>,
    fake: Var,
    lambda: f64,
) -> Result<Var> {
    let vars = discs.bind(tape, false);
    let logits = discs.forward(tape, &vars, fake)?;
    let mut total: Option<Var> = None;
    for l in logits {
        let t = tape.bce_with_logits(l, 1.0, BCE_EPS)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, t)?,
            None => t,
        });
    }
    tape.scale(total.expect("three scales"), lambda)
}

//! Training objectives. Every loss returns a rank-0 var on the caller's tape;
//! norms use the mean over elements unless noted.

mod adversarial;
mod features;

pub use adversarial::{discriminator_loss, generator_loss, BCE_EPS};
pub use features::{FeatureExtractor, FEATURE_SEED, FEATURE_TAPS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::Axis;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub l1d: f64,
    pub l1p: f64,
    pub perc: f64,
    pub sym: f64,
    pub std: f64,
    pub tv: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1d: 1.0,
            l1p: 3.0,
            perc: 1.0,
            sym: 0.3,
            std: 1.0,
            tv: 0.3,
            adv: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.l1d, self.l1p, self.perc, self.sym, self.std, self.tv, self.adv];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("loss-weights", format!("weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Separable Gaussian blur used by the symmetry and skin-tone terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurParams {
    pub sigma: f64,
    pub radius: usize,
}

impl BlurParams {
    /// 9x9 kernel with `sigma = 3 * R / 512`.
    pub fn for_resolution(resolution: usize) -> Self {
        Self {
            sigma: 3.0 * resolution as f64 / 512.0,
            radius: 4,
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.gaussian_blur(x, self.sigma, self.radius)
    }
}

fn same_shape<T: Scalar>(op: &'static str, tape: &Tape<T>, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(op, tape.shape(a), tape.shape(b)));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    same_shape("l1", tape, a, b)?;
    let d = tape.sub(a, b)?;
    let d = tape.abs(d)?;
    tape.mean(d)
}

/// Mean absolute difference over the texels where `mask [B|1,1,H,W]` is
/// nonzero, averaged over channels.
pub fn masked_l1_loss<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var, mask: &Tensor<T>) -> Result<Var> {
    same_shape("masked-l1", tape, a, b)?;
    let (n, c, h, w) = tape.value(a).dims4("masked-l1")?;
    let (mb, mc, mh, mw) = mask.dims4("masked-l1")?;
    if mc != 1 || mh != h || mw != w || (mb != n && mb != 1) {
        return Err(Error::shape("masked-l1", tape.shape(a), mask.shape()));
    }
    let hw = h * w;
    let full = Tensor::from_fn([n, c, h, w], |i| {
        let (bi, p) = (i / (c * hw), i % hw);
        let m = if mb == 1 { 0 } else { bi };
        if mask.data()[m * hw + p] != T::ZERO {
            T::ONE
        } else {
            T::ZERO
        }
    });
    let count = full.data().iter().filter(|&&v| v != T::ZERO).count();
    if count == 0 {
        return Err(Error::invalid("masked-l1", "mask is empty"));
    }
    let m = tape.constant(full);
    let d = tape.sub(a, b)?;
    let d = tape.abs(d)?;
    let d = tape.mul(d, m)?;
    let s = tape.sum(d)?;
    tape.scale(s, 1.0 / count as f64)
}

/// `l1d * L1(image, rendered) + l1p * L1(position, position_gt)`, the
/// position term restricted to `position_mask` when given.
#[allow(clippy::too_many_arguments)]
pub fn reconstruction_loss<T: Scalar>(
    tape: &mut Tape<T>,
    image: Var,
    rendered: Var,
    position: Var,
    position_gt: Var,
    position_mask: Option<&Tensor<T>>,
    w: &LossWeights,
) -> Result<Var> {
    let li = l1_loss(tape, image, rendered)?;
    let lp = match position_mask {
        Some(m) => masked_l1_loss(tape, position, position_gt, m)?,
        None => l1_loss(tape, position, position_gt)?,
    };
    let li = tape.scale(li, w.l1d)?;
    let lp = tape.scale(lp, w.l1p)?;
    tape.add(li, lp)
}

/// `lambda * sum_i mean |F_i(a) - F_i(b)|` over the extractor's taps.
pub fn perceptual_loss<T: Scalar>(
    tape: &mut Tape<T>,
    fx: &FeatureExtractor<T>,
    a: Var,
    b: Var,
    lambda: f64,
) -> Result<Var> {
    same_shape("perceptual", tape, a, b)?;
    let fa = fx.features(tape, a)?;
    let fb = fx.features(tape, b)?;
    let mut total: Option<Var> = None;
    for (x, y) in fa.into_iter().zip(fb) {
        let t = l1_loss(tape, x, y)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, t)?,
            None => t,
        });
    }
    tape.scale(total.expect("five taps"), lambda)
}

/// `lambda * L1(G(d), G(flip(d)))` on a UV-space map.
pub fn symmetry_loss<T: Scalar>(tape: &mut Tape<T>, diffuse: Var, lambda: f64, blur: BlurParams) -> Result<Var> {
    let flipped = tape.flip_h(diffuse)?;
    let a = blur.apply(tape, diffuse)?;
    let b = blur.apply(tape, flipped)?;
    let l = l1_loss(tape, a, b)?;
    tape.scale(l, lambda)
}

/// `lambda * std(G(image))` over the skin mask.
pub fn std_loss<T: Scalar>(
    tape: &mut Tape<T>,
    image: Var,
    mask: &Tensor<T>,
    lambda: f64,
    blur: BlurParams,
) -> Result<Var> {
    let g = blur.apply(tape, image)?;
    let s = tape.masked_std(g, mask)?;
    tape.scale(s, lambda)
}

/// `lambda * (mean |dx| + mean |dy|)` with forward differences.
pub fn tv_loss<T: Scalar>(tape: &mut Tape<T>, light: Var, lambda: f64) -> Result<Var> {
    let (_, _, h, w) = tape.value(light).dims4("tv")?;
    let mut total: Option<Var> = None;
    for (axis, len) in [(Axis::Width, w), (Axis::Height, h)] {
        if len < 2 {
            continue;
        }
        let g = tape.forward_diff(light, axis)?;
        let g = tape.abs(g)?;
        let m = tape.mean(g)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, m)?,
            None => m,
        });
    }
    match total {
        Some(t) => tape.scale(t, lambda),
        None => Ok(tape.constant(Tensor::scalar(T::ZERO))),
    }
}

/// `L1(d, d') + perceptual(d, d')` when a ground-truth diffuse map exists,
/// otherwise a constant zero.
pub fn auxiliary_diffuse_loss<T: Scalar>(
    tape: &mut Tape<T>,
    fx: &FeatureExtractor<T>,
    diffuse: Var,
    ground_truth: Option<Var>,
) -> Result<Var> {
    let Some(gt) = ground_truth else {
        return Ok(tape.constant(Tensor::scalar(T::ZERO)));
    };
    let l1 = l1_loss(tape, diffuse, gt)?;
    let p = perceptual_loss(tape, fx, diffuse, gt, 1.0)?;
    tape.add(l1, p)
}

//! Fused reductions with hand-derived backward rules.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

impl<T: Scalar> Tape<T> {
    /// Mean binary cross-entropy of `sigmoid(logits)` against a constant
    /// target, with probabilities clamped to `eps` inside the logarithms.
    pub fn bce_with_logits(&mut self, logits: Var, target: f64, eps: f64) -> Result<Var> {
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::invalid("bce", format!("target {target} outside [0, 1]")));
        }
        let v = self.value(logits);
        let n = v.numel() as f64;
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let total: f64 = v
            .data()
            .iter()
            .map(|&x| {
                let p = sig(x.to_f64());
                -(target * p.max(eps).ln() + (1.0 - target) * (1.0 - p).max(eps).ln())
            })
            .sum();
        let out = Tensor::scalar(T::from_f64(total / n));
        self.record("bce", &[logits], out, move |ctx| {
            let g = ctx.grad.data()[0].to_f64() / n;
            let d = ctx.inputs[0].map(|x| {
                let p = sig(x.to_f64());
                let pos = if p > eps { target * (1.0 - p) } else { 0.0 };
                let neg = if 1.0 - p > eps { -(1.0 - target) * p } else { 0.0 };
                T::from_f64(-g * (pos + neg))
            });
            vec![Some(d)]
        })
    }

    /// Population standard deviation of `x [B,C,H,W]` over the pixels where
    /// `mask [B|1,1,H,W]` is nonzero, around the per-channel masked mean,
    /// averaged over the batch. Gradient at zero deviation is taken as zero.
    pub fn masked_std(&mut self, x: Var, mask: &Tensor<T>) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("masked-std")?;
        let (mb, mc, mh, mw) = mask.dims4("masked-std")?;
        if mc != 1 || mh != h || mw != w || (mb != b && mb != 1) {
            return Err(Error::shape("masked-std", self.shape(x), mask.shape()));
        }
        let hw = h * w;
        let masks: Vec<Vec<bool>> = (0..b)
            .map(|n| {
                let m = if mb == 1 { 0 } else { n };
                mask.data()[m * hw..(m + 1) * hw]
                    .iter()
                    .map(|&v| v != T::ZERO)
                    .collect()
            })
            .collect();
        let counts: Vec<usize> = masks.iter().map(|m| m.iter().filter(|&&v| v).count()).collect();
        if counts.contains(&0) {
            return Err(Error::invalid("masked-std", "skin mask is empty"));
        }
        // deviations are taken around the first masked value, so a constant
        // plane gives exactly zero
        let xv = self.value(x).data();
        let mut shifts = vec![0.0; b * c];
        let mut means = vec![0.0; b * c];
        let mut stds = vec![0.0; b];
        for n in 0..b {
            let k = counts[n] as f64;
            let first = masks[n].iter().position(|&m| m).expect("non-empty mask");
            let mut ss = 0.0;
            for ch in 0..c {
                let plane = &xv[(n * c + ch) * hw..(n * c + ch + 1) * hw];
                let shift = plane[first].to_f64();
                let masked = || plane.iter().zip(&masks[n]).filter(|(_, &m)| m).map(|(v, _)| v.to_f64() - shift);
                let mu = masked().sum::<f64>() / k;
                shifts[n * c + ch] = shift;
                means[n * c + ch] = mu;
                ss += masked().map(|d| (d - mu).powi(2)).sum::<f64>();
            }
            stds[n] = (ss / k).sqrt();
        }
        let out = Tensor::scalar(T::from_f64(stds.iter().sum::<f64>() / b as f64));
        self.record("masked-std", &[x], out, move |ctx| {
            let g = ctx.grad.data()[0].to_f64() / b as f64;
            let xv = ctx.inputs[0].data();
            let mut gx = vec![T::ZERO; xv.len()];
            for n in 0..b {
                if stds[n] == 0.0 {
                    continue;
                }
                let scale = g / (counts[n] as f64 * stds[n]);
                for ch in 0..c {
                    let base = (n * c + ch) * hw;
                    let (shift, mu) = (shifts[n * c + ch], means[n * c + ch]);
                    for (i, &m) in masks[n].iter().enumerate() {
                        if m {
                            gx[base + i] = T::from_f64(scale * ((xv[base + i].to_f64() - shift) - mu));
                        }
                    }
                }
            }
            vec![Some(Tensor::new(ctx.inputs[0].shape().to_vec(), gx).expect("shape"))]
        })
    }
}

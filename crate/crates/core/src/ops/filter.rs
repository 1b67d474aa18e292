//! Spatial filters on `[B,C,H,W]` tensors: Gaussian blur, flips and forward
//! differences.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Half-sample symmetric index folding (`... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...`),
/// valid for any offset.
pub(crate) fn fold_symmetric(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Normalised 1-D Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    if sigma <= 0.0 {
        return (-r..=r).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    }
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Along image rows (`x`, last axis).
    Width,
    /// Along image columns (`y`).
    Height,
}

/// Strides of the 1-D lines along `axis`: `(line count, line length, element step, line starts)`.
fn lines(shape: (usize, usize, usize, usize), axis: Axis) -> (Vec<usize>, usize, usize) {
    let (b, c, h, w) = shape;
    match axis {
        Axis::Width => ((0..b * c * h).map(|r| r * w).collect(), w, 1),
        Axis::Height => (
            (0..b * c)
                .flat_map(|p| (0..w).map(move |x| p * h * w + x))
                .collect(),
            h,
            w,
        ),
    }
}

impl<T: Scalar> Tape<T> {
    fn blur_axis(&mut self, x: Var, taps: &[f64], axis: Axis) -> Result<Var> {
        let dims = self.value(x).dims4("gaussian-blur")?;
        let (starts, len, step) = lines(dims, axis);
        let r = (taps.len() / 2) as isize;
        let weights: Vec<T> = taps.iter().map(|&t| T::from_f64(t)).collect();
        // Source index of each (position, tap) along a line.
        let index: Vec<usize> = (0..len as isize)
            .flat_map(|j| (-r..=r).map(move |t| fold_symmetric(j + t, len)))
            .collect();
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; src.len()];
        let nt = weights.len();
        for &s in &starts {
            for j in 0..len {
                let mut acc = T::ZERO;
                for t in 0..nt {
                    acc += weights[t] * src[s + index[j * nt + t] * step];
                }
                out[s + j * step] = acc;
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        self.record("gaussian-blur", &[x], out, move |ctx| {
            let g = ctx.grad.data();
            let mut gx = vec![T::ZERO; g.len()];
            for &s in &starts {
                for j in 0..len {
                    let gj = g[s + j * step];
                    for t in 0..nt {
                        gx[s + index[j * nt + t] * step] += weights[t] * gj;
                    }
                }
            }
            vec![Some(Tensor::new(ctx.inputs[0].shape().to_vec(), gx).expect("shape"))]
        })
    }

    /// Separable Gaussian blur with a `(2*radius+1)`-tap kernel and
    /// half-sample symmetric padding. Commutes exactly with [`Tape::flip_h`].
    pub fn gaussian_blur(&mut self, x: Var, sigma: f64, radius: usize) -> Result<Var> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::invalid("gaussian-blur", format!("bad sigma {sigma}")));
        }
        let taps = gaussian_taps(sigma, radius);
        let h = self.blur_axis(x, &taps, Axis::Width)?;
        self.blur_axis(h, &taps, Axis::Height)
    }

    /// Mirror the last (width) axis.
    pub fn flip_h(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let w = *shape
            .last()
            .ok_or_else(|| Error::invalid("horizontal-flip", "rank-0 input"))?;
        let flip = move |d: &[T]| -> Vec<T> {
            d.chunks(w).flat_map(|row| row.iter().rev().copied()).collect()
        };
        let out = Tensor::new(shape, flip(self.value(x).data()))?;
        self.record("horizontal-flip", &[x], out, move |ctx| {
            let g = flip(ctx.grad.data());
            vec![Some(Tensor::new(ctx.inputs[0].shape().to_vec(), g).expect("shape"))]
        })
    }

    /// Forward difference `x[i+1] - x[i]` along `axis`; output is one shorter.
    pub fn forward_diff(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("forward-diff")?;
        let (oh, ow, step) = match axis {
            Axis::Width => (h, w.saturating_sub(1), 1),
            Axis::Height => (h.saturating_sub(1), w, w),
        };
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for p in 0..b * c {
            for y in 0..oh {
                for xx in 0..ow {
                    let i = (p * h + y) * w + xx;
                    out.push(src[i + step] - src[i]);
                }
            }
        }
        let out = Tensor::new(vec![b, c, oh, ow], out)?;
        self.record("forward-diff", &[x], out, move |ctx| {
            let g = ctx.grad.data();
            let mut gx = vec![T::ZERO; b * c * h * w];
            let mut k = 0;
            for p in 0..b * c {
                for y in 0..oh {
                    for xx in 0..ow {
                        let i = (p * h + y) * w + xx;
                        gx[i + step] += g[k];
                        gx[i] -= g[k];
                        k += 1;
                    }
                }
            }
            vec![Some(Tensor::new(ctx.inputs[0].shape().to_vec(), gx).expect("shape"))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folding_mirrors_edges() {
        let got: Vec<usize> = (-3..7).map(|i| fold_symmetric(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(fold_symmetric(-5, 1), 0);
    }

    #[test]
    fn taps_are_normalised_and_symmetric() {
        let t = gaussian_taps(1.3, 4);
        assert_eq!(t.len(), 9);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..4 {
            assert_eq!(t[i], t[8 - i]);
        }
        assert_eq!(gaussian_taps(0.0, 2), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn blur_preserves_constants_and_commutes_with_flip() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::full([1, 1, 5, 6], 0.3));
        let bc = tape.gaussian_blur(c, 2.0, 4).unwrap();
        assert!(tape.value(bc).data().iter().all(|v| (v - 0.3).abs() < 1e-15));

        let x = tape.constant(Tensor::from_fn([1, 2, 5, 6], |i| ((i * 37) % 11) as f64));
        let bf = {
            let f = tape.flip_h(x).unwrap();
            tape.gaussian_blur(f, 1.5, 4).unwrap()
        };
        let fb = {
            let b = tape.gaussian_blur(x, 1.5, 4).unwrap();
            tape.flip_h(b).unwrap()
        };
        assert!(tape.value(bf).max_abs_diff(tape.value(fb)).unwrap() < 1e-12);
    }

    #[test]
    fn forward_difference_of_ramp() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([1, 1, 2, 3], |i| (i % 3) as f64 * 0.5));
        let dx = tape.forward_diff(x, Axis::Width).unwrap();
        let dy = tape.forward_diff(x, Axis::Height).unwrap();
        assert_eq!(tape.shape(dx), &[1, 1, 2, 2]);
        assert_eq!(tape.value(dx).data(), &[0.5; 4]);
        assert_eq!(tape.value(dy).data(), &[0.0; 3]);
    }
}

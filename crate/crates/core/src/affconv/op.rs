//! The affine convolution kernel: per-output-location warped sampling
//! followed by a dense inner product with the weights.

use crate::error::{Error, Result};
use crate::ops::{apply_columns, bilinear_taps, columns_backward, conv_geometry, ConvGeom};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

use super::grid::{warp_offset, KernelGrid};

/// Bilinear read positions for every (tap, output location) of one sample.
struct SampleTable {
    /// Flat input-plane index of the four neighbours, `usize::MAX` outside.
    idx: Vec<[usize; 4]>,
    weight: Vec<[f64; 4]>,
    /// Fractional parts `(fx, fy)` of the sample position.
    frac: Vec<(f64, f64)>,
}

const OUTSIDE: usize = usize::MAX;

impl SampleTable {
    fn build<T: Scalar>(field: &[T], grid: &KernelGrid, g: &ConvGeom) -> Self {
        let l = g.cols();
        let kk = grid.offsets().len();
        let r = (grid.size() / 2) as isize;
        let mut idx = Vec::with_capacity(kk * l);
        let mut weight = Vec::with_capacity(kk * l);
        let mut frac = Vec::with_capacity(kk * l);
        for &[dx, dy] in grid.offsets() {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let loc = oy * g.ow + ox;
                    let e: [f64; 6] = std::array::from_fn(|c| field[c * l + loc].to_f64());
                    let cx = (ox * g.stride) as isize - g.pad as isize + r;
                    let cy = (oy * g.stride) as isize - g.pad as isize + r;
                    let (wx, wy) = warp_offset(&e, dx as f64, dy as f64);
                    let (px, py) = (cx as f64 + wx, cy as f64 + wy);
                    let taps = bilinear_taps(px, py, g.w, g.h);
                    idx.push(taps.map(|(i, _)| i.unwrap_or(OUTSIDE)));
                    weight.push(taps.map(|(_, w)| w));
                    frac.push((px - px.floor(), py - py.floor()));
                }
            }
        }
        Self { idx, weight, frac }
    }

    /// Gather warped columns `[cin * kk, L]` for one sample.
    fn gather<T: Scalar>(&self, x: &[T], g: &ConvGeom, cols: &mut [T]) {
        let plane = g.h * g.w;
        let n = self.idx.len();
        for ci in 0..g.cin {
            let src = &x[ci * plane..(ci + 1) * plane];
            let dst = &mut cols[ci * n..(ci + 1) * n];
            for (j, d) in dst.iter_mut().enumerate() {
                let mut acc = 0.0;
                for q in 0..4 {
                    let i = self.idx[j][q];
                    if i != OUTSIDE {
                        acc += self.weight[j][q] * src[i].to_f64();
                    }
                }
                *d = T::from_f64(acc);
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Affine convolution.
    ///
    /// `field` is `[B, 6, H_out, W_out]`; at each output location its six
    /// channels `(a, b, c, d, tx, ty)` warp the kernel's offsets before the
    /// zero-padded bilinear gather. With the identity encoding everywhere this
    /// is exactly [`Tape::conv2d`] with the same stride and padding. Gradients
    /// flow to the input, weight, bias and field.
    pub fn affine_conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        field: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (batch, cout, g) = conv_geometry(
            "affine-conv2d",
            self.shape(x),
            self.shape(weight),
            bias.map(|b| self.shape(b)),
            stride,
            pad,
        )?;
        if g.kh != g.kw {
            return Err(Error::invalid("affine-conv2d", "kernel must be square"));
        }
        let grid = KernelGrid::new(g.kh).map_err(|_| {
            Error::invalid("affine-conv2d", format!("kernel size {} must be odd", g.kh))
        })?;
        let expected = [batch, 6, g.oh, g.ow];
        if self.shape(field) != expected {
            return Err(Error::shape("affine-conv2d", &expected, self.shape(field)));
        }
        let (k, l) = (g.rows(), g.cols());
        let in_size = g.cin * g.h * g.w;
        let f_size = 6 * l;
        let mut out = vec![T::ZERO; batch * cout * l];
        let mut cols = vec![T::ZERO; k * l];
        {
            let xv = self.value(x).data();
            let wv = self.value(weight).data();
            let fv = self.value(field).data();
            let bv = bias.map(|b| self.value(b).data());
            for b in 0..batch {
                let table = SampleTable::build(&fv[b * f_size..(b + 1) * f_size], &grid, &g);
                table.gather(&xv[b * in_size..(b + 1) * in_size], &g, &mut cols);
                apply_columns(wv, bv, &cols, cout, &g, &mut out[b * cout * l..(b + 1) * cout * l]);
            }
        }
        let out = Tensor::new(vec![batch, cout, g.oh, g.ow], out)?;
        let mut inputs = vec![x, weight, field];
        inputs.extend(bias);
        self.record("affine-conv2d", &inputs, out, move |ctx| {
            let (xv, wv, fv, go) = (
                ctx.inputs[0].data(),
                ctx.inputs[1].data(),
                ctx.inputs[2].data(),
                ctx.grad.data(),
            );
            let has_bias = ctx.inputs.len() > 3;
            let (need_x, need_f) = (ctx.needs[0], ctx.needs[2]);
            let mut gx = need_x.then(|| vec![T::ZERO; xv.len()]);
            let mut gw = ctx.needs[1].then(|| vec![T::ZERO; wv.len()]);
            let mut gf = need_f.then(|| vec![T::ZERO; fv.len()]);
            let mut gb = (has_bias && ctx.needs[3]).then(|| vec![T::ZERO; cout]);
            let kk = grid.offsets().len();
            let plane = g.h * g.w;
            let mut cols = vec![T::ZERO; k * l];
            for b in 0..batch {
                let xb = &xv[b * in_size..(b + 1) * in_size];
                let table = SampleTable::build(&fv[b * f_size..(b + 1) * f_size], &grid, &g);
                if gw.is_some() {
                    table.gather(xb, &g, &mut cols);
                }
                let dcols = columns_backward(
                    wv,
                    &cols,
                    &go[b * cout * l..(b + 1) * cout * l],
                    cout,
                    &g,
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                    need_x || need_f,
                );
                let Some(dcols) = dcols else { continue };
                let n = kk * l;
                if let Some(gx) = gx.as_mut() {
                    let gxb = &mut gx[b * in_size..(b + 1) * in_size];
                    for ci in 0..g.cin {
                        let dst = &mut gxb[ci * plane..(ci + 1) * plane];
                        let src = &dcols[ci * n..(ci + 1) * n];
                        for (j, &d) in src.iter().enumerate() {
                            let d = d.to_f64();
                            for q in 0..4 {
                                let i = table.idx[j][q];
                                if i != OUTSIDE {
                                    dst[i] += T::from_f64(table.weight[j][q] * d);
                                }
                            }
                        }
                    }
                }
                if let Some(gf) = gf.as_mut() {
                    // d(out)/d(sample position), summed over input channels
                    let mut gpx = vec![0.0; n];
                    let mut gpy = vec![0.0; n];
                    for ci in 0..g.cin {
                        let src = &xb[ci * plane..(ci + 1) * plane];
                        let dc = &dcols[ci * n..(ci + 1) * n];
                        for j in 0..n {
                            let d = dc[j].to_f64();
                            if d == 0.0 {
                                continue;
                            }
                            let v = |q: usize| {
                                let i = table.idx[j][q];
                                if i == OUTSIDE {
                                    0.0
                                } else {
                                    src[i].to_f64()
                                }
                            };
                            let (fx, fy) = table.frac[j];
                            let (v00, v01, v10, v11) = (v(0), v(1), v(2), v(3));
                            gpx[j] += d * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                            gpy[j] += d * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                        }
                    }
                    let gfb = &mut gf[b * f_size..(b + 1) * f_size];
                    for (t, &[dx, dy]) in grid.offsets().iter().enumerate() {
                        let (dx, dy) = (dx as f64, dy as f64);
                        for loc in 0..l {
                            let (px, py) = (gpx[t * l + loc], gpy[t * l + loc]);
                            let upd = [px * dx, py * dx, px * dy, py * dy, px, py];
                            for (c, u) in upd.into_iter().enumerate() {
                                gfb[c * l + loc] += T::from_f64(u);
                            }
                        }
                    }
                }
            }
            let wrap = |d: Option<Vec<T>>, i: usize| {
                d.map(|d| Tensor::new(ctx.inputs[i].shape().to_vec(), d).expect("shape"))
            };
            let mut grads = vec![wrap(gx, 0), wrap(gw, 1), wrap(gf, 2)];
            if has_bias {
                grads.push(wrap(gb, 3));
            }
            grads
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::affconv::AffineField;
    use crate::gradcheck;
    use crate::ops::conv2d_naive;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    fn run(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, f: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let mut tape = Tape::new();
        let (x, w, b, f) = (
            tape.constant(x.clone()),
            tape.constant(w.clone()),
            tape.constant(b.clone()),
            tape.constant(f.clone()),
        );
        let y = tape.affine_conv2d(x, w, Some(b), f, s, p).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn identity_field_is_plain_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (5, 1, 2), (1, 1, 0), (3, 2, 0)] {
            let x = random(&[2, 3, 9, 7], &mut rng);
            let w = random(&[4, 3, k, k], &mut rng);
            let b = random(&[4], &mut rng);
            let reference = conv2d_naive(&x, &w, Some(&b), s, p);
            let (_, _, oh, ow) = reference.dims4("t").unwrap();
            let field = AffineField::identity(2, oh, ow).into_tensor();
            let y = run(&x, &w, &b, &field, s, p);
            assert!(y.max_abs_diff(&reference).unwrap() < 1e-12);
        }
    }

    #[test]
    fn integer_translation_shifts_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[1, 2, 10, 10], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let field = AffineField::constant(1, 10, 10, [1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).into_tensor();
        let y = run(&x, &w, &b, &field, 1, 1);
        let shifted = Tensor::from_fn([1, 2, 10, 10], |i| {
            let col = i % 10;
            if col + 1 < 10 {
                x.data()[i + 1]
            } else {
                0.0
            }
        });
        let reference = conv2d_naive(&shifted, &w, Some(&b), 1, 1);
        for c in 0..3 {
            for oy in 2..8 {
                for ox in 2..7 {
                    let i = (c * 10 + oy) * 10 + ox;
                    assert!((y.data()[i] - reference.data()[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn field_change_is_local_without_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[1, 2, 12, 12], &mut rng);
        let w = random(&[2, 2, 3, 3], &mut rng);
        let b = Tensor::zeros([2]);
        let base = AffineField::<f64>::identity(1, 4, 4).into_tensor();
        let mut bumped = base.clone();
        // location (oy, ox) = (2, 1), channels a and ty
        bumped.data_mut()[2 * 4 + 1] = 1.3;
        bumped.data_mut()[5 * 16 + 2 * 4 + 1] = 0.4;
        let y0 = run(&x, &w, &b, &base, 3, 0);
        let y1 = run(&x, &w, &b, &bumped, 3, 0);
        for c in 0..2 {
            for loc in 0..16 {
                let changed = y0.data()[c * 16 + loc] != y1.data()[c * 16 + loc];
                assert_eq!(changed, loc == 2 * 4 + 1, "channel {c} location {loc}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[1, 2, 6, 6], &mut rng);
        let w = random(&[2, 2, 3, 3], &mut rng);
        let b = random(&[2], &mut rng);
        let mut f = AffineField::<f64>::identity(1, 3, 3).into_tensor();
        for v in f.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let reports = gradcheck::check(
            &[("input", x), ("weight", w), ("bias", b), ("field", f)],
            gradcheck::DEFAULT_STEP,
            |t, v| {
                let y = t.affine_conv2d(v[0], v[1], Some(v[2]), v[3], 2, 1)?;
                let y2 = t.square(y)?;
                t.mean(y2)
            },
        )
        .unwrap();
        for r in &reports {
            assert!(r.passes(1e-6), "{r:?}");
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([1, 1, 6, 6]));
        let w = tape.constant(Tensor::zeros([1, 1, 3, 3]));
        let f = tape.constant(AffineField::identity(1, 5, 6).into_tensor());
        assert!(tape.affine_conv2d(x, w, None, f, 1, 1).is_err());
        let w2 = tape.constant(Tensor::zeros([1, 1, 2, 2]));
        let f2 = tape.constant(AffineField::identity(1, 7, 7).into_tensor());
        assert!(tape.affine_conv2d(x, w2, None, f2, 1, 1).is_err());
    }
}

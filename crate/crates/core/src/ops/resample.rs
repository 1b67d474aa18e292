//! Bilinear resizing, average pooling and point sampling.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Per-output-index source taps for half-pixel-centred linear resizing.
fn linear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// `a + t (b - a)`: exact when `a == b`, so constant maps resample to
/// themselves.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Four neighbours and weights of a bilinear read at `(x, y)` in pixel
/// coordinates. Out-of-range neighbours are `None` (zero padding).
#[inline]
pub(crate) fn bilinear_taps(x: f64, y: f64, w: usize, h: usize) -> [(Option<usize>, f64); 4] {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let idx = |xi: isize, yi: isize| {
        (xi >= 0 && yi >= 0 && (xi as usize) < w && (yi as usize) < h).then(|| yi as usize * w + xi as usize)
    };
    [
        (idx(x0, y0), (1.0 - fx) * (1.0 - fy)),
        (idx(x0 + 1, y0), fx * (1.0 - fy)),
        (idx(x0, y0 + 1), (1.0 - fx) * fy),
        (idx(x0 + 1, y0 + 1), fx * fy),
    ]
}

/// Partial derivatives of a zero-padded bilinear read with respect to the
/// sample position.
#[inline]
pub(crate) fn bilinear_coord_grad<T: Scalar>(plane: &[T], x: f64, y: f64, w: usize, h: usize) -> (f64, f64) {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let v = |xi: isize, yi: isize| {
        if xi >= 0 && yi >= 0 && (xi as usize) < w && (yi as usize) < h {
            plane[yi as usize * w + xi as usize].to_f64()
        } else {
            0.0
        }
    };
    let (v00, v01, v10, v11) = (v(x0, y0), v(x0 + 1, y0), v(x0, y0 + 1), v(x0 + 1, y0 + 1));
    (
        (1.0 - fy) * (v01 - v00) + fy * (v11 - v10),
        (1.0 - fx) * (v10 - v00) + fx * (v11 - v01),
    )
}

impl<T: Scalar> Tape<T> {
    /// Bilinear resize of `[B,C,H,W]` to `[B,C,oh,ow]` with half-pixel centres
    /// and edge clamping.
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("resize-bilinear")?;
        if oh == 0 || ow == 0 || h == 0 || w == 0 {
            return Err(Error::invalid("resize-bilinear", "empty extent"));
        }
        let ty = linear_taps(h, oh);
        let tx = linear_taps(w, ow);
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; b * c * oh * ow];
        for p in 0..b * c {
            let plane = &src[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let v = |y: usize, x: usize| plane[y * w + x].to_f64();
                    let top = lerp(v(y0, x0), v(y0, x1), fx);
                    let bot = lerp(v(y1, x0), v(y1, x1), fx);
                    dst[oy * ow + ox] = T::from_f64(lerp(top, bot, fy));
                }
            }
        }
        let out = Tensor::new(vec![b, c, oh, ow], out)?;
        self.record("resize-bilinear", &[x], out, move |ctx| {
            let g = ctx.grad.data();
            let mut gx = vec![T::ZERO; b * c * h * w];
            for p in 0..b * c {
                let plane = &mut gx[p * h * w..(p + 1) * h * w];
                let go = &g[p * oh * ow..(p + 1) * oh * ow];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let v = go[oy * ow + ox].to_f64();
                        plane[y0 * w + x0] += T::from_f64(v * (1.0 - fy) * (1.0 - fx));
                        plane[y0 * w + x1] += T::from_f64(v * (1.0 - fy) * fx);
                        plane[y1 * w + x0] += T::from_f64(v * fy * (1.0 - fx));
                        plane[y1 * w + x1] += T::from_f64(v * fy * fx);
                    }
                }
            }
            vec![Some(Tensor::new(ctx.inputs[0].shape().to_vec(), gx).expect("shape"))]
        })
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4("bilinear-upsample-2x")?;
        self.resize_bilinear(x, 2 * h, 2 * w)
    }

    /// Non-overlapping `k x k` average pooling.
    pub fn avgpool(&mut self, x: Var, k: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("avgpool")?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::invalid(
                "avgpool",
                format!("window {k} does not tile {h}x{w}"),
            ));
        }
        let (oh, ow) = (h / k, w / k);
        let norm = T::from_f64(1.0 / (k * k) as f64);
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; b * c * oh * ow];
        for p in 0..b * c {
            for y in 0..h {
                for xx in 0..w {
                    out[(p * oh + y / k) * ow + xx / k] += src[(p * h + y) * w + xx];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= norm);
        let out = Tensor::new(vec![b, c, oh, ow], out)?;
        self.record("avgpool", &[x], out, move |ctx| {
            let g = ctx.grad.data();
            let gx = (0..b * c * h * w)
                .map(|i| {
                    let (p, rem) = (i / (h * w), i % (h * w));
                    let (y, xx) = (rem / w, rem % w);
                    g[(p * oh + y / k) * ow + xx / k] * norm
                })
                .collect();
            vec![Some(Tensor::new(ctx.inputs[0].shape().to_vec(), gx).expect("shape"))]
        })
    }

    /// Zero-padded bilinear reads of `map [B,C,H,W]` at `coords [B,K,2]`
    /// (pixel coordinates `(x, y)`, integer values hit pixel centres).
    /// Returns `[B,C,K]`; differentiable in both the map and the coordinates.
    pub fn bilinear_sample(&mut self, map: Var, coords: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(map).dims4("bilinear-sample")?;
        let cs = self.shape(coords).to_vec();
        if cs.len() != 3 || cs[0] != b || cs[2] != 2 {
            return Err(Error::shape("bilinear-sample", &[b, c, h, w], &cs));
        }
        let k = cs[1];
        let (mv, cv) = (self.value(map).data(), self.value(coords).data());
        let mut out = vec![T::ZERO; b * c * k];
        for n in 0..b {
            for p in 0..k {
                let (x, y) = (cv[(n * k + p) * 2].to_f64(), cv[(n * k + p) * 2 + 1].to_f64());
                let taps = bilinear_taps(x, y, w, h);
                let (fx, fy) = (x - x.floor(), y - y.floor());
                for ch in 0..c {
                    let plane = &mv[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
                    let v = |t: usize| taps[t].0.map_or(0.0, |i| plane[i].to_f64());
                    let top = lerp(v(0), v(1), fx);
                    let bot = lerp(v(2), v(3), fx);
                    out[(n * c + ch) * k + p] = T::from_f64(lerp(top, bot, fy));
                }
            }
        }
        let out = Tensor::new(vec![b, c, k], out)?;
        self.record("bilinear-sample", &[map, coords], out, move |ctx| {
            let (mv, cv, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let mut gm = ctx.needs[0].then(|| vec![T::ZERO; mv.len()]);
            let mut gc = ctx.needs[1].then(|| vec![T::ZERO; cv.len()]);
            for n in 0..b {
                for p in 0..k {
                    let (x, y) = (cv[(n * k + p) * 2].to_f64(), cv[(n * k + p) * 2 + 1].to_f64());
                    let taps = bilinear_taps(x, y, w, h);
                    let (mut dx, mut dy) = (0.0, 0.0);
                    for ch in 0..c {
                        let go = g[(n * c + ch) * k + p].to_f64();
                        let base = (n * c + ch) * h * w;
                        if let Some(gm) = gm.as_mut() {
                            for &(i, wt) in &taps {
                                if let Some(i) = i {
                                    gm[base + i] += T::from_f64(go * wt);
                                }
                            }
                        }
                        if gc.is_some() {
                            let (px, py) = bilinear_coord_grad(&mv[base..base + h * w], x, y, w, h);
                            dx += go * px;
                            dy += go * py;
                        }
                    }
                    if let Some(gc) = gc.as_mut() {
                        gc[(n * k + p) * 2] = T::from_f64(dx);
                        gc[(n * k + p) * 2 + 1] = T::from_f64(dy);
                    }
                }
            }
            let wrap = |d: Option<Vec<T>>, i: usize| {
                d.map(|d| Tensor::new(ctx.inputs[i].shape().to_vec(), d).expect("shape"))
            };
            vec![wrap(gm, 0), wrap(gc, 1)]
        })
    }
}

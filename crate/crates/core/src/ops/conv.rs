//! Standard 2-D convolution via im2col and GEMM.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Output extent of a strided, zero-padded convolution along one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfold one image `[cin, h, w]` into `[cin*kh*kw, oh*ow]`.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let l = g.cols();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into an image.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let l = g.cols();
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Validate shapes shared by standard and affine convolution and return
/// `(batch, cout, geometry)`.
pub(crate) fn conv_geometry(
    op: &'static str,
    x: &[usize],
    w: &[usize],
    bias: Option<&[usize]>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, ConvGeom)> {
    let &[b, cin, h, wd] = x else {
        return Err(Error::invalid(op, format!("input must be [B,C,H,W], got {x:?}")));
    };
    let &[cout, wcin, kh, kw] = w else {
        return Err(Error::invalid(op, format!("weight must be [Cout,Cin,kh,kw], got {w:?}")));
    };
    if wcin != cin {
        return Err(Error::shape(op, x, w));
    }
    if let Some(bs) = bias {
        if bs != [cout] {
            return Err(Error::shape(op, w, bs));
        }
    }
    let (Some(oh), Some(ow)) = (
        conv_out_size(h, kh, stride, pad),
        conv_out_size(wd, kw, stride, pad),
    ) else {
        return Err(Error::invalid(
            op,
            format!("kernel {kh}x{kw} with stride {stride}, pad {pad} does not fit input {x:?}"),
        ));
    };
    Ok((
        b,
        cout,
        ConvGeom {
            cin,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        },
    ))
}

/// `out[b] = weight * cols[b] + bias` for pre-filled column buffers.
pub(crate) fn apply_columns<T: Scalar>(
    weight: &[T],
    bias: Option<&[T]>,
    cols: &[T],
    cout: usize,
    g: &ConvGeom,
    out: &mut [T],
) {
    let l = g.cols();
    match bias {
        Some(bias) => {
            for (co, &bv) in bias.iter().enumerate() {
                out[co * l..(co + 1) * l].fill(bv);
            }
            T::gemm(cout, g.rows(), l, weight, false, cols, false, T::ONE, out);
        }
        None => T::gemm(cout, g.rows(), l, weight, false, cols, false, T::ZERO, out),
    }
}

/// Accumulate weight and bias gradients for one sample, and return the
/// column gradient `weight^T * grad_out` when requested.
pub(crate) fn columns_backward<T: Scalar>(
    weight: &[T],
    cols: &[T],
    grad_out: &[T],
    cout: usize,
    g: &ConvGeom,
    gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
    want_cols: bool,
) -> Option<Vec<T>> {
    let (k, l) = (g.rows(), g.cols());
    if let Some(gw) = gw {
        T::gemm(cout, l, k, grad_out, false, cols, true, T::ONE, gw);
    }
    if let Some(gb) = gb {
        for (co, acc) in gb.iter_mut().enumerate() {
            *acc += grad_out[co * l..(co + 1) * l].iter().copied().sum();
        }
    }
    want_cols.then(|| {
        let mut dcols = vec![T::ZERO; k * l];
        T::gemm(k, cout, l, weight, true, grad_out, false, T::ZERO, &mut dcols);
        dcols
    })
}

impl<T: Scalar> Tape<T> {
    /// Zero-padded strided convolution. `weight` is `[Cout, Cin, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (batch, cout, g) = conv_geometry(
            "conv2d",
            self.shape(x),
            self.shape(weight),
            bias.map(|b| self.shape(b)),
            stride,
            pad,
        )?;
        let (k, l) = (g.rows(), g.cols());
        let in_size = g.cin * g.h * g.w;
        let mut out = vec![T::ZERO; batch * cout * l];
        let mut cols = vec![T::ZERO; k * l];
        {
            let xv = self.value(x).data();
            let wv = self.value(weight).data();
            let bv = bias.map(|b| self.value(b).data());
            for b in 0..batch {
                im2col(&xv[b * in_size..(b + 1) * in_size], &g, &mut cols);
                apply_columns(wv, bv, &cols, cout, &g, &mut out[b * cout * l..(b + 1) * cout * l]);
            }
        }
        let out = Tensor::new(vec![batch, cout, g.oh, g.ow], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record("conv2d", &inputs, out, move |ctx| {
            let (xv, wv, go) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let need_x = ctx.needs[0];
            let mut gw = ctx.needs[1].then(|| vec![T::ZERO; wv.len()]);
            let has_bias = ctx.inputs.len() > 2;
            let mut gb = (has_bias && ctx.needs[2]).then(|| vec![T::ZERO; cout]);
            let mut gx = need_x.then(|| vec![T::ZERO; xv.len()]);
            let mut cols = vec![T::ZERO; k * l];
            for b in 0..batch {
                if gw.is_some() {
                    im2col(&xv[b * in_size..(b + 1) * in_size], &g, &mut cols);
                }
                let dcols = columns_backward(
                    wv,
                    &cols,
                    &go[b * cout * l..(b + 1) * cout * l],
                    cout,
                    &g,
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                    need_x,
                );
                if let (Some(gx), Some(dcols)) = (gx.as_mut(), dcols) {
                    col2im(&dcols, &g, &mut gx[b * in_size..(b + 1) * in_size]);
                }
            }
            let wrap = |d: Option<Vec<T>>, i: usize| {
                d.map(|d| Tensor::new(ctx.inputs[i].shape().to_vec(), d).expect("shape"))
            };
            let mut grads = vec![wrap(gx, 0), wrap(gw, 1)];
            if has_bias {
                grads.push(wrap(gb, 2));
            }
            grads
        })
    }
}

/// Direct nested-loop convolution, kept as an independent reference for tests.
#[cfg(test)]
pub(crate) fn conv2d_naive(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let (b, cin, h, wd) = x.dims4("naive").unwrap();
    let (cout, _, kh, kw) = w.dims4("naive").unwrap();
    let oh = conv_out_size(h, kh, stride, pad).unwrap();
    let ow = conv_out_size(wd, kw, stride, pad).unwrap();
    let mut out = Tensor::zeros([b, cout, oh, ow]);
    for n in 0..b {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb.data()[co]);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.data()[((n * cin + ci) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                    }
                    out.data_mut()[((n * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{numel, Scalar, Tensor};

#[inline]
fn at<T: Scalar>(t: &Tensor<T>, i: usize) -> T {
    if t.numel() == 1 {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

/// Sum a full-size gradient back down to `shape` (a scalar operand) or
/// return it unchanged.
fn reduce_to<T: Scalar>(shape: &[usize], full: Vec<T>) -> Tensor<T> {
    if numel(shape) == 1 && full.len() != 1 {
        Tensor::full(shape.to_vec(), full.iter().copied().sum())
    } else {
        Tensor::new(shape.to_vec(), full).expect("gradient shape")
    }
}

/// Output shape of a binary op: equal shapes, or one operand is a scalar.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    match (numel(a), numel(b)) {
        (1, _) => Ok(b.to_vec()),
        (_, 1) => Ok(a.to_vec()),
        _ => Err(Error::shape(op, a, b)),
    }
}

impl<T: Scalar> Tape<T> {
    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: fn(T, T) -> T,
        dfa: fn(T, T) -> T,
        dfb: fn(T, T) -> T,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(name, va.shape(), vb.shape())?;
        let n = numel(&shape);
        let data = (0..n).map(|i| f(at(va, i), at(vb, i))).collect();
        let out = Tensor::new(shape, data)?;
        self.record(name, &[a, b], out, move |ctx| {
            let (x, y, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad.data());
            let ga = ctx.needs[0].then(|| {
                let full = (0..n).map(|i| g[i] * dfa(at(x, i), at(y, i))).collect();
                reduce_to(x.shape(), full)
            });
            let gb = ctx.needs[1].then(|| {
                let full = (0..n).map(|i| g[i] * dfb(at(x, i), at(y, i))).collect();
                reduce_to(y.shape(), full)
            });
            vec![ga, gb]
        })
    }

    /// Elementwise `a + b`; either side may be a one-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |_, _| T::ONE, |_, _| T::ONE)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |_, _| T::ONE, |_, _| -T::ONE)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    /// `f(x)` with derivative `df(x, f(x))`.
    pub(crate) fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var> {
        let out = self.value(x).map(f);
        self.record(name, &[x], out, move |ctx| {
            let (x, y, g) = (ctx.inputs[0], ctx.output, ctx.grad);
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .zip(g.data())
                .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                .collect();
            vec![Some(Tensor::new(x.shape().to_vec(), data).expect("shape"))]
        })
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::from_f64(s);
        self.unary("scalar-mul", x, move |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::from_f64(s);
        self.unary("add-scalar", x, move |v| v + s, |_, _| T::ONE)
    }

    /// `|x|`, with zero subgradient at the origin.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "abs",
            x,
            |v| v.abs(),
            |v, _| {
                if v > T::ZERO {
                    T::ONE
                } else if v < T::ZERO {
                    -T::ONE
                } else {
                    T::ZERO
                }
            },
        )
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, |v, _| v + v)
    }

    /// Square root; the gradient at zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "sqrt",
            x,
            |v| v.sqrt(),
            |_, y| {
                if y > T::ZERO {
                    T::ONE / (y + y)
                } else {
                    T::ZERO
                }
            },
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let s = T::from_f64(slope);
        self.unary(
            "leaky-relu",
            x,
            move |v| if v > T::ZERO { v } else { v * s },
            move |v, _| if v > T::ZERO { T::ONE } else { s },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "sigmoid",
            x,
            |v| T::ONE / (T::ONE + (-v).exp()),
            |_, y| y * (T::ONE - y),
        )
    }

    /// Clamp into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
        self.unary(
            "clamp",
            x,
            move |v| v.max(lo).min(hi),
            move |v, _| {
                if v >= lo && v <= hi {
                    T::ONE
                } else {
                    T::ZERO
                }
            },
        )
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.record("reshape", &[x], out, |ctx| {
            let g = ctx.grad.clone().reshape(ctx.inputs[0].shape().to_vec());
            vec![Some(g.expect("reshape grad"))]
        })
    }

    /// Concatenate `[B,Ci,...]` tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self
            .value(*xs.first().ok_or_else(|| Error::invalid("concat-channel", "no inputs"))?)
            .shape()
            .to_vec();
        if first.len() < 2 {
            return Err(Error::invalid("concat-channel", "inputs need a channel axis"));
        }
        let (batch, inner) = (first[0], numel(&first[2..]));
        let mut channels = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || s[0] != batch || s[2..] != first[2..] {
                return Err(Error::shape("concat-channel", &first, s));
            }
            channels.push(s[1]);
        }
        let total: usize = channels.iter().sum();
        let mut data = Vec::with_capacity(batch * total * inner);
        for b in 0..batch {
            for (&x, &c) in xs.iter().zip(&channels) {
                let src = self.value(x).data();
                data.extend_from_slice(&src[b * c * inner..(b + 1) * c * inner]);
            }
        }
        let mut shape = first.clone();
        shape[1] = total;
        let out = Tensor::new(shape, data)?;
        self.record("concat-channel", xs, out, move |ctx| {
            let g = ctx.grad.data();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(channels.len());
            for (k, &c) in channels.iter().enumerate() {
                if ctx.needs[k] {
                    let mut d = Vec::with_capacity(batch * c * inner);
                    for b in 0..batch {
                        let start = (b * total + offset) * inner;
                        d.extend_from_slice(&g[start..start + c * inner]);
                    }
                    grads.push(Some(Tensor::new(ctx.inputs[k].shape().to_vec(), d).expect("shape")));
                } else {
                    grads.push(None);
                }
                offset += c;
            }
            grads
        })
    }

    /// Repeat a single-channel `[B,1,...]` tensor into `[B,c,...]`.
    pub fn expand_channels(&mut self, x: Var, c: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || s[1] != 1 {
            return Err(Error::invalid(
                "expand-channels",
                format!("expected a single-channel tensor, got {s:?}"),
            ));
        }
        let (batch, inner) = (s[0], numel(&s[2..]));
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(batch * c * inner);
        for b in 0..batch {
            for _ in 0..c {
                data.extend_from_slice(&src[b * inner..(b + 1) * inner]);
            }
        }
        let mut shape = s.clone();
        shape[1] = c;
        let out = Tensor::new(shape, data)?;
        self.record("expand-channels", &[x], out, move |ctx| {
            let g = ctx.grad.data();
            let mut d = vec![T::ZERO; batch * inner];
            for b in 0..batch {
                for ch in 0..c {
                    let base = (b * c + ch) * inner;
                    for i in 0..inner {
                        d[b * inner + i] += g[base + i];
                    }
                }
            }
            vec![Some(Tensor::new(ctx.inputs[0].shape().to_vec(), d).expect("shape"))]
        })
    }

    /// `x[b,c,..] * s[b,c]`: per-sample, per-channel gain.
    pub fn mul_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ss = self.shape(s).to_vec();
        if xs.len() < 2 || numel(&ss) != xs[0] * xs[1] {
            return Err(Error::shape("mul-channels", &xs, &ss));
        }
        let groups = xs[0] * xs[1];
        let inner = numel(&xs[2..]);
        let (vx, vs) = (self.value(x).data(), self.value(s).data());
        let data = (0..groups * inner).map(|i| vx[i] * vs[i / inner]).collect();
        let out = Tensor::new(xs, data)?;
        self.record("mul-channels", &[x, s], out, move |ctx| {
            let (vx, vs, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let gx = ctx.needs[0].then(|| {
                let d = (0..groups * inner).map(|i| g[i] * vs[i / inner]).collect();
                Tensor::new(ctx.inputs[0].shape().to_vec(), d).expect("shape")
            });
            let gs = ctx.needs[1].then(|| {
                let d = (0..groups)
                    .map(|k| (0..inner).map(|i| g[k * inner + i] * vx[k * inner + i]).sum())
                    .collect();
                Tensor::new(ctx.inputs[1].shape().to_vec(), d).expect("shape")
            });
            vec![gx, gs]
        })
    }
}

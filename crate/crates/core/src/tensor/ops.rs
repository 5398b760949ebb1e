//! Elementwise arithmetic with broadcasting, activations, reductions and
//! shape manipulation.

use std::sync::Arc;

use super::graph::Var;
use super::{broadcast_shape, Scalar, Tensor};
use crate::error::{dim_err, Error, Result};

const SOFTPLUS_LINEAR_ABOVE: f64 = 30.0;
const GELU_COEF: f64 = 0.044_715;

/// Pointwise functions with a closed-form derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Identity,
    Exp,
    Log,
    Neg,
    Relu,
    Tanh,
    Sigmoid,
    /// `ln(1 + e^x)`, returning `x` itself above 30.
    Softplus,
    /// Tanh approximation `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    Gelu,
    /// `x * sigmoid(x)`.
    Silu,
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn gelu_inner_coef<T: Scalar>() -> T {
    T::of((2.0 / std::f64::consts::PI).sqrt())
}

impl Unary {
    #[inline]
    pub fn eval<T: Scalar>(self, x: T) -> T {
        match self {
            Unary::Identity => x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Neg => -x,
            Unary::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => {
                if x > T::of(SOFTPLUS_LINEAR_ABOVE) {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Unary::Gelu => {
                let c = gelu_inner_coef::<T>();
                let inner = c * (x + T::of(GELU_COEF) * x * x * x);
                T::of(0.5) * x * (T::one() + inner.tanh())
            }
            Unary::Silu => x * sigmoid(x),
        }
    }

    /// Derivative at `x`. ReLU uses 0 at the kink.
    #[inline]
    pub fn deriv<T: Scalar>(self, x: T) -> T {
        match self {
            Unary::Identity => T::one(),
            Unary::Exp => x.exp(),
            Unary::Log => T::one() / x,
            Unary::Neg => -T::one(),
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Unary::Sigmoid => {
                let s = sigmoid(x);
                s * (T::one() - s)
            }
            Unary::Softplus => {
                if x > T::of(SOFTPLUS_LINEAR_ABOVE) {
                    T::one()
                } else {
                    sigmoid(x)
                }
            }
            Unary::Gelu => {
                let c = gelu_inner_coef::<T>();
                let k = T::of(GELU_COEF);
                let t = (c * (x + k * x * x * x)).tanh();
                let half = T::of(0.5);
                half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x)
            }
            Unary::Silu => {
                let s = sigmoid(x);
                s + x * s * (T::one() - s)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// Flat offset into `inp` for every element of the broadcast `out` shape.
fn broadcast_offsets(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let pad = rank - inp.len();
    // input strides aligned to output axes, 0 on broadcast axes
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..inp.len()).rev() {
        strides[pad + i] = if inp[i] == 1 { 0 } else { acc };
        acc *= inp[i];
    }
    let n: usize = out.iter().product();
    let mut offsets = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        offsets.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            off -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    offsets
}

/// Sum `g` (shaped like the broadcast output) back onto an input of `len`
/// elements through `offsets`.
fn scatter_sum<T: Scalar>(g: &[T], offsets: &[usize], len: usize, f: impl Fn(usize, T) -> T) -> Vec<T> {
    let mut out = vec![T::zero(); len];
    for (i, (&gi, &o)) in g.iter().zip(offsets).enumerate() {
        out[o] += f(i, gi);
    }
    out
}

impl<'g, T: Scalar> Var<'g, T> {
    fn binary(self, other: Var<'g, T>, kind: Binary) -> Result<Var<'g, T>> {
        let a = self.value();
        let b = other.value();
        let out_shape = broadcast_shape(a.shape(), b.shape())?;
        if kind == Binary::Div && b.data().iter().any(|v| *v == T::zero()) {
            return Err(Error::Domain("division by zero".into()));
        }
        let same = a.shape() == b.shape();
        let (ao, bo): (Arc<Vec<usize>>, Arc<Vec<usize>>) = if same {
            (Arc::new(vec![]), Arc::new(vec![]))
        } else {
            (Arc::new(broadcast_offsets(&out_shape, a.shape())), Arc::new(broadcast_offsets(&out_shape, b.shape())))
        };
        let op = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data: Vec<T> = if same {
            a.data().iter().zip(b.data()).map(|(&x, &y)| op(x, y)).collect()
        } else {
            ao.iter().zip(bo.iter()).map(|(&i, &j)| op(a.data()[i], b.data()[j])).collect()
        };
        let out = Tensor::new(&out_shape, data)?;
        let g = self.graph();
        Ok(g.record(out, &[self, other], move |go, needs| {
            let gd = go.data();
            let (ad, bd) = (a.data(), b.data());
            let ai = |i: usize| if same { i } else { ao[i] };
            let bi = |i: usize| if same { i } else { bo[i] };
            let ga = needs[0].then(|| {
                let f = |i: usize, gi: T| match kind {
                    Binary::Add | Binary::Sub => gi,
                    Binary::Mul => gi * bd[bi(i)],
                    Binary::Div => gi / bd[bi(i)],
                };
                let v = if same {
                    gd.iter().enumerate().map(|(i, &gi)| f(i, gi)).collect()
                } else {
                    scatter_sum(gd, &ao, ad.len(), f)
                };
                Tensor::new(a.shape(), v).expect("grad shape")
            });
            let gb = needs[1].then(|| {
                let f = |i: usize, gi: T| match kind {
                    Binary::Add => gi,
                    Binary::Sub => -gi,
                    Binary::Mul => gi * ad[ai(i)],
                    Binary::Div => {
                        let y = bd[bi(i)];
                        -gi * ad[ai(i)] / (y * y)
                    }
                };
                let v = if same {
                    gd.iter().enumerate().map(|(i, &gi)| f(i, gi)).collect()
                } else {
                    scatter_sum(gd, &bo, bd.len(), f)
                };
                Tensor::new(b.shape(), v).expect("grad shape")
            });
            vec![ga, gb]
        }))
    }

    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, Binary::Div)
    }

    /// Apply a pointwise function. `Log` on non-positive input is an error.
    pub fn unary(self, f: Unary) -> Result<Var<'g, T>> {
        let x = self.value();
        if f == Unary::Log && x.data().iter().any(|v| *v <= T::zero()) {
            return Err(Error::Domain("log of a non-positive value".into()));
        }
        Ok(self.apply(f))
    }

    pub(crate) fn apply(self, f: Unary) -> Var<'g, T> {
        let x = self.value();
        let out = x.map(|v| f.eval(v));
        self.graph().record(out, &[self], move |go, _| {
            let d = go.data().iter().zip(x.data()).map(|(&g, &v)| g * f.deriv(v)).collect();
            vec![Some(Tensor::new(x.shape(), d).expect("grad shape"))]
        })
    }

    pub fn exp(self) -> Var<'g, T> {
        self.apply(Unary::Exp)
    }

    pub fn ln(self) -> Result<Var<'g, T>> {
        self.unary(Unary::Log)
    }

    pub fn neg(self) -> Var<'g, T> {
        self.apply(Unary::Neg)
    }

    pub fn relu(self) -> Var<'g, T> {
        self.apply(Unary::Relu)
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        self.apply(Unary::Sigmoid)
    }

    pub fn tanh(self) -> Var<'g, T> {
        self.apply(Unary::Tanh)
    }

    pub fn softplus(self) -> Var<'g, T> {
        self.apply(Unary::Softplus)
    }

    /// `c * x`.
    pub fn scale(self, c: f64) -> Var<'g, T> {
        let c = T::of(c);
        let x = self.value();
        let out = x.map(|v| v * c);
        let shape = x.shape().to_vec();
        self.graph().record(out, &[self], move |go, _| {
            vec![Some(Tensor::new(&shape, go.data().iter().map(|&g| g * c).collect()).expect("shape"))]
        })
    }

    /// `x + c`.
    pub fn add_scalar(self, c: f64) -> Var<'g, T> {
        let c = T::of(c);
        let out = self.value().map(|v| v + c);
        self.graph().record(out, &[self], |go, _| vec![Some(go.clone())])
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g, T> {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let x = self.value();
        let out = x.map(|v| v.max(lo).min(hi));
        self.graph().record(out, &[self], move |go, _| {
            let d =
                go.data().iter().zip(x.data()).map(|(&g, &v)| if v < lo || v > hi { T::zero() } else { g }).collect();
            vec![Some(Tensor::new(x.shape(), d).expect("shape"))]
        })
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(self) -> Var<'g, T> {
        let x = self.value();
        let s: T = x.data().iter().copied().sum();
        let shape = x.shape().to_vec();
        self.graph().record(Tensor::scalar(s), &[self], move |go, _| vec![Some(Tensor::full(&shape, go.item()))])
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = self.with_value(|t| t.len()).max(1);
        self.sum().scale(1.0 / n as f64)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        let n: usize = shape.iter().product();
        if n != x.len() {
            return dim_err(format!("cannot reshape {:?} into {shape:?}", x.shape()));
        }
        let out = Tensor::new(shape, x.data().to_vec())?;
        let orig = x.shape().to_vec();
        Ok(self
            .graph()
            .record(out, &[self], move |go, _| vec![Some(Tensor::new(&orig, go.data().to_vec()).expect("shape"))]))
    }

    /// Swap the last two axes: `[..., X, Y] -> [..., Y, X]`.
    pub fn transpose_last2(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let s = x.shape();
        if s.len() < 2 {
            return dim_err(format!("transpose_last2 needs rank >= 2, got {s:?}"));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let lead: usize = s[..s.len() - 2].iter().product();
        let mut out_shape = s.to_vec();
        let k = out_shape.len();
        out_shape.swap(k - 2, k - 1);
        let out = Tensor::new(&out_shape, transpose_blocks(x.data(), lead, r, c))?;
        let in_shape = s.to_vec();
        Ok(self.graph().record(out, &[self], move |go, _| {
            vec![Some(Tensor::new(&in_shape, transpose_blocks(go.data(), lead, c, r)).expect("shape"))]
        }))
    }

    /// Concatenate 4-D tensors along axis 1.
    pub fn concat_channels(parts: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let Some(first) = parts.first() else {
            return dim_err("concat of zero tensors");
        };
        let values: Vec<Arc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let s0 = values[0].shape().to_vec();
        if s0.len() != 4 {
            return dim_err(format!("concat_channels needs rank 4, got {s0:?}"));
        }
        let (n, h, w) = (s0[0], s0[2], s0[3]);
        let chans: Vec<usize> = values.iter().map(|v| v.shape()[1]).collect();
        for v in &values {
            let s = v.shape();
            if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
                return dim_err(format!("concat_channels: {s:?} vs {s0:?}"));
            }
        }
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for (v, &c) in values.iter().zip(&chans) {
                data.extend_from_slice(&v.data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let out = Tensor::new(&[n, total, h, w], data)?;
        Ok(first.graph().record(out, parts, move |go, needs| {
            let gd = go.data();
            let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(chans.len());
            let mut c_off = 0;
            for (k, &c) in chans.iter().enumerate() {
                if needs[k] {
                    let mut d = Vec::with_capacity(n * c * hw);
                    for b in 0..n {
                        let base = (b * total + c_off) * hw;
                        d.extend_from_slice(&gd[base..base + c * hw]);
                    }
                    grads.push(Some(Tensor::new(&[n, c, h, w], d).expect("shape")));
                } else {
                    grads.push(None);
                }
                c_off += c;
            }
            grads
        }))
    }
}

fn transpose_blocks<T: Scalar>(src: &[T], lead: usize, r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for l in 0..lead {
        let s = &src[l * r * c..(l + 1) * r * c];
        let d = &mut out[l * r * c..(l + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                d[j * r + i] = s[i * c + j];
            }
        }
    }
    out
}

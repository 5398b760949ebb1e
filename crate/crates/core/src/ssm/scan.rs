use crate::error::{dim_err, Result};
use crate::nn::{Builder, Init};
use crate::tensor::{Ctx, ParamId, Scalar, Tensor, Var};

/// Multiply-accumulates charged per `(n, t, e, s)` cell of a scan: state
/// decay, input injection and output read-out.
pub const SCAN_MACS_PER_CELL: u64 = 3;

/// Diagonal selective recurrence, row-major over `[N, L, E]` tokens:
///
/// ```text
/// h_t[e,s] = exp(delta[t,e] * a[e,s]) * h_{t-1}[e,s] + delta[t,e] * b[t,s] * u[t,e]
/// y[t,e]   = sum_s c[t,s] * h_t[e,s] + d[e] * u[t,e]
/// ```
///
/// with `h_0 = 0`. Shapes: `u, delta: [N,L,E]`, `a: [E,S]`, `b, c: [N,L,S]`,
/// `d: [E]`.
pub fn scan_core<'g, T: Scalar>(
    u: Var<'g, T>,
    delta: Var<'g, T>,
    a: Var<'g, T>,
    b: Var<'g, T>,
    c: Var<'g, T>,
    d: Var<'g, T>,
) -> Result<Var<'g, T>> {
    let (uv, dv, av, bv, cv, skip) = (u.value(), delta.value(), a.value(), b.value(), c.value(), d.value());
    let us = uv.shape().to_vec();
    if us.len() != 3 || us[1] == 0 {
        return dim_err(format!("scan input must be [N, L>0, E], got {us:?}"));
    }
    let (n, l, e) = (us[0], us[1], us[2]);
    if av.rank() != 2 || av.shape()[0] != e {
        return dim_err(format!("scan state matrix {:?} for {e} channels", av.shape()));
    }
    let s = av.shape()[1];
    if dv.shape() != us.as_slice() || bv.shape() != [n, l, s] || cv.shape() != [n, l, s] || skip.shape() != [e] {
        return dim_err(format!(
            "scan operands: u {us:?}, delta {:?}, b {:?}, c {:?}, d {:?} with S={s}",
            dv.shape(),
            bv.shape(),
            cv.shape(),
            skip.shape()
        ));
    }
    u.graph().add_macs(SCAN_MACS_PER_CELL * (n * l * e * s) as u64);

    let (y, hist) = forward_states((n, l, e, s), uv.data(), dv.data(), av.data(), bv.data(), cv.data(), skip.data());
    let out = Tensor::new(&us, y)?;
    Ok(u.graph().record(out, &[u, delta, a, b, c, d], move |go, needs| {
        let (ud, deld, ad, bd, cd, dd) = (uv.data(), dv.data(), av.data(), bv.data(), cv.data(), skip.data());
        let g = go.data();
        let mut du = vec![T::zero(); n * l * e];
        let mut ddelta = vec![T::zero(); n * l * e];
        let mut da = vec![T::zero(); e * s];
        let mut db = vec![T::zero(); n * l * s];
        let mut dc = vec![T::zero(); n * l * s];
        let mut dd_ = vec![T::zero(); e];
        // adjoint of the state, [E, S]
        let mut lam = vec![T::zero(); e * s];
        for bi in 0..n {
            lam.iter_mut().for_each(|v| *v = T::zero());
            for t in (0..l).rev() {
                let tok = bi * l + t;
                for ei in 0..e {
                    let gy = g[tok * e + ei];
                    let (ut, dt) = (ud[tok * e + ei], deld[tok * e + ei]);
                    dd_[ei] += gy * ut;
                    let mut du_acc = gy * dd[ei];
                    let mut ddt = T::zero();
                    let cur = (tok * e + ei) * s;
                    for si in 0..s {
                        let h = hist[cur + si];
                        dc[tok * s + si] += gy * h;
                        let lm = lam[ei * s + si] + gy * cd[tok * s + si];
                        let prev = if t == 0 { T::zero() } else { hist[cur - e * s + si] };
                        let aes = ad[ei * s + si];
                        let decay = (dt * aes).exp();
                        let bts = bd[tok * s + si];
                        // through the decay factor
                        let gd = lm * prev * decay;
                        ddt += gd * aes;
                        da[ei * s + si] += gd * dt;
                        // through the input injection
                        ddt += lm * bts * ut;
                        db[tok * s + si] += lm * dt * ut;
                        du_acc += lm * dt * bts;
                        lam[ei * s + si] = lm * decay;
                    }
                    du[tok * e + ei] = du_acc;
                    ddelta[tok * e + ei] = ddt;
                }
            }
        }
        let mk = |want: bool, shape: &[usize], v: Vec<T>| want.then(|| Tensor::new(shape, v).expect("shape"));
        vec![
            mk(needs[0], &[n, l, e], du),
            mk(needs[1], &[n, l, e], ddelta),
            mk(needs[2], &[e, s], da),
            mk(needs[3], &[n, l, s], db),
            mk(needs[4], &[n, l, s], dc),
            mk(needs[5], &[e], dd_),
        ]
    }))
}

type Dims = (usize, usize, usize, usize);

/// Outputs `[N, L, E]` and the state after every step `[N, L, E, S]`.
pub(crate) fn forward_states<T: Scalar>(
    (n, l, e, s): Dims,
    ud: &[T],
    deld: &[T],
    ad: &[T],
    bd: &[T],
    cd: &[T],
    dd: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut hist = vec![T::zero(); n * l * e * s];
    let mut y = vec![T::zero(); n * l * e];
    for bi in 0..n {
        for t in 0..l {
            let tok = bi * l + t;
            for ei in 0..e {
                let (ut, dt) = (ud[tok * e + ei], deld[tok * e + ei]);
                let cur = (tok * e + ei) * s;
                let mut acc = dd[ei] * ut;
                for si in 0..s {
                    let prev = if t == 0 { T::zero() } else { hist[cur - e * s + si] };
                    let h = (dt * ad[ei * s + si]).exp() * prev + dt * bd[tok * s + si] * ut;
                    hist[cur + si] = h;
                    acc += cd[tok * s + si] * h;
                }
                y[tok * e + ei] = acc;
            }
        }
    }
    (y, hist)
}

/// Input-dependent SSM parameters for an `E`-channel token stream.
#[derive(Clone, Debug)]
pub struct Ssm {
    /// `[E, S]`, `A = -exp(a_log)`.
    pub a_log: ParamId,
    /// `[E]`.
    pub d: ParamId,
    /// `[S, E]`.
    pub proj_b: ParamId,
    pub proj_c: ParamId,
    /// `[E, E]` and `[E]`.
    pub proj_delta: ParamId,
    pub delta_bias: ParamId,
    pub dim: usize,
    pub state: usize,
}

/// Operands of [`scan_core`] derived from a token stream.
pub struct ScanInputs<'g, T> {
    pub delta: Var<'g, T>,
    pub a: Var<'g, T>,
    pub b: Var<'g, T>,
    pub c: Var<'g, T>,
    pub d: Var<'g, T>,
}

impl Ssm {
    pub fn new<T: Scalar>(bld: &mut Builder<'_, T>, dim: usize, state: usize) -> Result<Self> {
        if dim == 0 || state == 0 {
            return Err(crate::Error::Config(format!("SSM with E={dim}, S={state}")));
        }
        // A in [-1, -S], log-spaced along the state axis
        let a: Vec<f64> = (0..dim * state)
            .map(|i| {
                let si = i % state;
                if state == 1 {
                    0.0
                } else {
                    (state as f64).ln() * si as f64 / (state - 1) as f64
                }
            })
            .collect();
        let a_log = bld.param("a_log", &[dim, state], Init::Zeros)?;
        // step sizes log-spaced over [1e-3, 1e-1], stored through inverse softplus
        let bias: Vec<f64> = (0..dim)
            .map(|ei| {
                let f = if dim == 1 { 0.5 } else { ei as f64 / (dim - 1) as f64 };
                let dt = (1e-3f64.ln() + f * (1e-1f64.ln() - 1e-3f64.ln())).exp();
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect();
        let delta_bias = bld.param("delta_bias", &[dim], Init::Zeros)?;
        let ssm = Ssm {
            a_log,
            d: bld.param("d", &[dim], Init::Ones)?,
            proj_b: bld.param("proj_b", &[state, dim], Init::KaimingUniform { fan_in: dim, gain: 1.0 })?,
            proj_c: bld.param("proj_c", &[state, dim], Init::KaimingUniform { fan_in: dim, gain: 1.0 })?,
            proj_delta: bld.param("proj_delta", &[dim, dim], Init::KaimingUniform { fan_in: dim, gain: 1.0 })?,
            delta_bias,
            dim,
            state,
        };
        bld.set(a_log, Tensor::from_f64(&[dim, state], &a)?)?;
        bld.set(delta_bias, Tensor::from_f64(&[dim], &bias)?)?;
        Ok(ssm)
    }

    pub fn inputs<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, u: Var<'g, T>) -> Result<ScanInputs<'g, T>> {
        let (pd, bias) = (cx.p(self.proj_delta), cx.p(self.delta_bias));
        let (pb, pc) = (cx.p(self.proj_b), cx.p(self.proj_c));
        Ok(ScanInputs {
            delta: u.linear(pd, Some(bias))?.softplus(),
            a: cx.p(self.a_log).exp().neg(),
            b: u.linear(pb, None)?,
            c: u.linear(pc, None)?,
            d: cx.p(self.d),
        })
    }

    /// Selective scan over `u: [N, L, E]`.
    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, u: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = u.shape();
        if s.len() != 3 || s[2] != self.dim {
            return dim_err(format!("SSM over E={} got tokens {s:?}", self.dim));
        }
        let p = self.inputs(cx, u)?;
        scan_core(u, p.delta, p.a, p.b, p.c, p.d)
    }
}

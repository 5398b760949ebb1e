//! Spatial operators on `[N, C, H, W]` tensors. Convolutions use the
//! cross-correlation convention.

use std::sync::Arc;

use super::graph::Var;
use super::linalg::gemm;
use super::{Scalar, Tensor};
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn geom(x: &[usize], kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Geom> {
    if x.len() != 4 {
        return dim_err(format!("expected [N, C, H, W], got {x:?}"));
    }
    if stride == 0 {
        return dim_err("stride must be positive");
    }
    let (c, h, w) = (x[1], x[2], x[3]);
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return dim_err(format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    Ok(Geom { c, h, w, kh, kw, stride, pad, oh, ow })
}

/// Unfold one image `[C, H, W]` into `[C*kh*kw, oh*ow]`.
fn im2col<T: Scalar>(x: &[T], g: &Geom, col: &mut [T]) {
    let ohw = g.oh * g.ow;
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut col[((c * g.kh + i) * g.kw + j) * ohw..][..ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into `[C, H, W]`.
fn col2im<T: Scalar>(col: &[T], g: &Geom, x: &mut [T]) {
    let ohw = g.oh * g.ow;
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &col[((c * g.kh + i) * g.kw + j) * ohw..][..ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += row[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// 2-D convolution: `x[N,C,H,W] ⋆ kernel[O,C,kh,kw] (+ bias[O])`.
    pub fn conv2d(self, kernel: Var<'g, T>, bias: Option<Var<'g, T>>, stride: usize, pad: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let k = kernel.value();
        let ks = k.shape().to_vec();
        if ks.len() != 4 {
            return dim_err(format!("conv kernel must be [O, C, kh, kw], got {ks:?}"));
        }
        let g = geom(x.shape(), ks[2], ks[3], stride, pad)?;
        if ks[1] != g.c {
            return dim_err(format!("conv kernel expects {} input channels, input has {}", ks[1], g.c));
        }
        let (n, o) = (x.shape()[0], ks[0]);
        let bv = match bias {
            Some(b) => {
                let bv = b.value();
                if bv.shape() != [o] {
                    return dim_err(format!("conv bias {:?}, expected [{o}]", bv.shape()));
                }
                Some(bv)
            }
            None => None,
        };
        let ckk = g.c * g.kh * g.kw;
        let ohw = g.oh * g.ow;
        let in_per = g.c * g.h * g.w;
        let mut out = vec![T::zero(); n * o * ohw];
        let mut col = vec![T::zero(); ckk * ohw];
        for b in 0..n {
            im2col(&x.data()[b * in_per..(b + 1) * in_per], &g, &mut col);
            let dst = &mut out[b * o * ohw..(b + 1) * o * ohw];
            if let Some(bv) = &bv {
                for (oc, row) in dst.chunks_mut(ohw).enumerate() {
                    row.iter_mut().for_each(|v| *v = bv.data()[oc]);
                }
            }
            gemm(o, ckk, ohw, k.data(), false, &col, false, T::one(), dst);
        }
        let graph = self.graph();
        graph.add_macs((n * o * ckk * ohw) as u64);
        let mut parents = vec![self, kernel];
        parents.extend(bias);
        let xs = x.shape().to_vec();
        Ok(graph.record(Tensor::new(&[n, o, g.oh, g.ow], out)?, &parents, move |go, needs| {
            let gy = go.data();
            let mut gx = needs[0].then(|| vec![T::zero(); n * in_per]);
            let mut gk = needs[1].then(|| vec![T::zero(); o * ckk]);
            let mut col = vec![T::zero(); ckk * ohw];
            for b in 0..n {
                let gyb = &gy[b * o * ohw..(b + 1) * o * ohw];
                if let Some(gk) = gk.as_mut() {
                    im2col(&x.data()[b * in_per..(b + 1) * in_per], &g, &mut col);
                    gemm(o, ohw, ckk, gyb, false, &col, true, T::one(), gk);
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(ckk, o, ohw, k.data(), true, gyb, false, T::zero(), &mut col);
                    col2im(&col, &g, &mut gx[b * in_per..(b + 1) * in_per]);
                }
            }
            let mut grads =
                vec![gx.map(|d| Tensor::new(&xs, d).expect("shape")), gk.map(|d| Tensor::new(&ks, d).expect("shape"))];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| {
                    let mut d = vec![T::zero(); o];
                    for (i, row) in gy.chunks(ohw).enumerate() {
                        d[i % o] += row.iter().copied().sum::<T>();
                    }
                    Tensor::new(&[o], d).expect("shape")
                }));
            }
            grads
        }))
    }

    /// Per-channel convolution: channel `c` of `x` meets only `kernel[c, 0]`.
    pub fn depthwise_conv2d(self, kernel: Var<'g, T>, stride: usize, pad: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let k = kernel.value();
        let ks = k.shape().to_vec();
        if ks.len() != 4 || ks[1] != 1 {
            return dim_err(format!("depthwise kernel must be [C, 1, kh, kw], got {ks:?}"));
        }
        let g = geom(x.shape(), ks[2], ks[3], stride, pad)?;
        if ks[0] != g.c {
            return dim_err(format!("depthwise kernel has {} channels, input has {}", ks[0], g.c));
        }
        let n = x.shape()[0];
        let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
        let mut out = vec![T::zero(); n * g.c * ohw];
        {
            let (xd, kd) = (x.data(), k.data());
            for_each_tap(&g, n, |p, t, xi, oi| {
                out[p * ohw + oi] += kd[(p % g.c) * kk + t] * xd[p * hw + xi];
            });
        }
        let graph = self.graph();
        graph.add_macs((n * g.c * kk * ohw) as u64);
        let xs = x.shape().to_vec();
        Ok(graph.record(Tensor::new(&[n, g.c, g.oh, g.ow], out)?, &[self, kernel], move |go, needs| {
            let gy = go.data();
            let (xd, kd) = (x.data(), k.data());
            let mut gx = vec![T::zero(); if needs[0] { xd.len() } else { 0 }];
            let mut gk = vec![T::zero(); if needs[1] { kd.len() } else { 0 }];
            for_each_tap(&g, n, |p, t, xi, oi| {
                let gyv = gy[p * ohw + oi];
                if needs[0] {
                    gx[p * hw + xi] += kd[(p % g.c) * kk + t] * gyv;
                }
                if needs[1] {
                    gk[(p % g.c) * kk + t] += xd[p * hw + xi] * gyv;
                }
            });
            vec![
                needs[0].then(|| Tensor::new(&xs, gx).expect("shape")),
                needs[1].then(|| Tensor::new(&ks, gk).expect("shape")),
            ]
        }))
    }

    /// Max pooling with a square window equal to the stride (floor mode).
    /// The gradient goes to the first row-major maximum of each window.
    pub fn maxpool2d(self, window: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let s = x.shape().to_vec();
        if s.len() != 4 || window == 0 || s[2] < window || s[3] < window {
            return dim_err(format!("maxpool{window} on {s:?}"));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / window, w / window);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut arg = Vec::with_capacity(n * c * oh * ow);
        let xd = x.data();
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = p * h * w + oy * window * w + ox * window;
                    for i in 0..window {
                        for j in 0..window {
                            let idx = p * h * w + (oy * window + i) * w + ox * window + j;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xd[best]);
                    arg.push(best);
                }
            }
        }
        let len = xd.len();
        Ok(self.graph().record(Tensor::new(&[n, c, oh, ow], out)?, &[self], move |go, _| {
            let mut d = vec![T::zero(); len];
            for (&a, &gv) in arg.iter().zip(go.data()) {
                d[a] += gv;
            }
            vec![Some(Tensor::new(&s, d).expect("shape"))]
        }))
    }

    /// 2×2 average pooling in ceil mode; partial windows average the cells
    /// they cover.
    pub fn avgpool2x2(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let s = x.shape().to_vec();
        if s.len() != 4 {
            return dim_err(format!("avgpool2x2 on {s:?}"));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let cells = move |oy: usize, ox: usize| {
            let ys = 2 * oy..(2 * oy + 2).min(h);
            let xs = 2 * ox..(2 * ox + 2).min(w);
            (ys, xs)
        };
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (ys, xs) = cells(oy, ox);
                    let cnt = (ys.len() * xs.len()) as f64;
                    let mut acc = T::zero();
                    for y in ys {
                        for xx in xs.clone() {
                            acc += xd[p * h * w + y * w + xx];
                        }
                    }
                    out.push(acc / T::of(cnt));
                }
            }
        }
        Ok(self.graph().record(Tensor::new(&[n, c, oh, ow], out)?, &[self], move |go, _| {
            let gy = go.data();
            let mut d = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (ys, xs) = cells(oy, ox);
                        let share = gy[(p * oh + oy) * ow + ox] / T::of((ys.len() * xs.len()) as f64);
                        for y in ys {
                            for xx in xs.clone() {
                                d[p * h * w + y * w + xx] += share;
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::new(&s, d).expect("shape"))]
        }))
    }

    /// Bilinear ×2 upsampling with half-pixel centres (align-corners false).
    pub fn upsample_bilinear2x(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let s = x.shape().to_vec();
        if s.len() != 4 || s[2] == 0 || s[3] == 0 {
            return dim_err(format!("upsample on {s:?}"));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (2 * h, 2 * w);
        let ty: Arc<Vec<(usize, usize, T, T)>> = Arc::new(interp_table(h));
        let tx: Arc<Vec<(usize, usize, T, T)>> = Arc::new(interp_table(w));
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let plane = &xd[p * h * w..(p + 1) * h * w];
            for &(y0, y1, wy0, wy1) in ty.iter() {
                for &(x0, x1, wx0, wx1) in tx.iter() {
                    let top = wx0 * plane[y0 * w + x0] + wx1 * plane[y0 * w + x1];
                    let bot = wx0 * plane[y1 * w + x0] + wx1 * plane[y1 * w + x1];
                    out.push(wy0 * top + wy1 * bot);
                }
            }
        }
        Ok(self.graph().record(Tensor::new(&[n, c, oh, ow], out)?, &[self], move |go, _| {
            let gy = go.data();
            let mut d = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                let plane = &mut d[p * h * w..(p + 1) * h * w];
                let gp = &gy[p * oh * ow..(p + 1) * oh * ow];
                for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                        let gv = gp[oy * ow + ox];
                        plane[y0 * w + x0] += gv * wy0 * wx0;
                        plane[y0 * w + x1] += gv * wy0 * wx1;
                        plane[y1 * w + x0] += gv * wy1 * wx0;
                        plane[y1 * w + x1] += gv * wy1 * wx1;
                    }
                }
            }
            vec![Some(Tensor::new(&s, d).expect("shape"))]
        }))
    }

    /// Mean over the channel axis: `[N, C, H, W] -> [N, 1, H, W]`.
    pub fn channel_mean(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let s = x.shape().to_vec();
        if s.len() != 4 || s[1] == 0 {
            return dim_err(format!("channel_mean on {s:?}"));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let inv = T::one() / T::of(c as f64);
        let xd = x.data();
        let mut out = vec![T::zero(); n * hw];
        for b in 0..n {
            let dst = &mut out[b * hw..(b + 1) * hw];
            for ch in 0..c {
                for (o, &v) in dst.iter_mut().zip(&xd[(b * c + ch) * hw..][..hw]) {
                    *o += v;
                }
            }
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(self.graph().record(Tensor::new(&[n, 1, s[2], s[3]], out)?, &[self], move |go, _| {
            let gy = go.data();
            let mut d = vec![T::zero(); n * c * hw];
            for b in 0..n {
                for ch in 0..c {
                    for (o, &g) in d[(b * c + ch) * hw..][..hw].iter_mut().zip(&gy[b * hw..(b + 1) * hw]) {
                        *o = g * inv;
                    }
                }
            }
            vec![Some(Tensor::new(&s, d).expect("shape"))]
        }))
    }

    /// Max over the channel axis; gradient to the first maximal channel.
    pub fn channel_max(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let s = x.shape().to_vec();
        if s.len() != 4 || s[1] == 0 {
            return dim_err(format!("channel_max on {s:?}"));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let xd = x.data();
        let mut out = Vec::with_capacity(n * hw);
        let mut arg = Vec::with_capacity(n * hw);
        for b in 0..n {
            for i in 0..hw {
                let mut best = b * c * hw + i;
                for ch in 1..c {
                    let idx = (b * c + ch) * hw + i;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
        Ok(self.graph().record(Tensor::new(&[n, 1, s[2], s[3]], out)?, &[self], move |go, _| {
            let mut d = vec![T::zero(); n * c * hw];
            for (&a, &g) in arg.iter().zip(go.data()) {
                d[a] += g;
            }
            vec![Some(Tensor::new(&s, d).expect("shape"))]
        }))
    }
}

/// Visit `(plane, tap, input offset, output offset)` for every kernel tap
/// that lands inside the unpadded image.
fn for_each_tap(g: &Geom, n: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    for p in 0..n * g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        f(p, i * g.kw + j, iy as usize * g.w + ix as usize, oy * g.ow + ox);
                    }
                }
            }
        }
    }
}

/// For each of the `2n` output positions: source indices and weights.
fn interp_table<T: Scalar>(n: usize) -> Vec<(usize, usize, T, T)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let l = src - i0 as f64;
            (i0, i1, T::of(1.0 - l), T::of(l))
        })
        .collect()
}

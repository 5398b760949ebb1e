use super::graph::Var;
use super::{Scalar, Tensor};
use crate::error::{dim_err, Result};

/// Row-major `c = a·b + beta·c` where `a` is logically `m×k` and `b` is `k×n`.
/// `ta`/`tb` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assert above bounds every index reachable from (m, k, n)
    // and these strides.
    unsafe {
        T::gemm_raw(m, k, n, T::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1)
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return dim_err(format!("matmul of {sa:?} and {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, T::zero(), &mut out);
        let g = self.graph();
        g.add_macs((m * k * n) as u64);
        Ok(g.record(Tensor::new(&[m, n], out)?, &[self, other], move |go, needs| {
            let gy = go.data();
            let ga = needs[0].then(|| {
                let mut d = vec![T::zero(); m * k];
                gemm(m, n, k, gy, false, b.data(), true, T::zero(), &mut d);
                Tensor::new(&[m, k], d).expect("shape")
            });
            let gb = needs[1].then(|| {
                let mut d = vec![T::zero(); k * n];
                gemm(k, m, n, a.data(), true, gy, false, T::zero(), &mut d);
                Tensor::new(&[k, n], d).expect("shape")
            });
            vec![ga, gb]
        }))
    }

    /// Affine map over the last axis: `x[..., K] · wᵀ (+ bias) -> [..., O]`
    /// with `w: [O, K]` and `bias: [O]`.
    pub fn linear(self, w: Var<'g, T>, bias: Option<Var<'g, T>>) -> Result<Var<'g, T>> {
        let x = self.value();
        let wv = w.value();
        let (sx, sw) = (x.shape().to_vec(), wv.shape().to_vec());
        if sw.len() != 2 || sx.is_empty() || *sx.last().unwrap() != sw[1] {
            return dim_err(format!("linear: input {sx:?} vs weight {sw:?}"));
        }
        let (o, k) = (sw[0], sw[1]);
        let m = x.len() / k;
        let bv = match bias {
            Some(b) => {
                let bv = b.value();
                if bv.shape() != [o] {
                    return dim_err(format!("linear bias {:?}, expected [{o}]", bv.shape()));
                }
                Some(bv)
            }
            None => None,
        };
        let mut out = vec![T::zero(); m * o];
        if let Some(bv) = &bv {
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(m, k, o, x.data(), false, wv.data(), true, T::one(), &mut out);
        let mut out_shape = sx.clone();
        *out_shape.last_mut().unwrap() = o;
        let g = self.graph();
        g.add_macs((m * k * o) as u64);
        let mut parents = vec![self, w];
        parents.extend(bias);
        Ok(g.record(Tensor::new(&out_shape, out)?, &parents, move |go, needs| {
            let gy = go.data();
            let gx = needs[0].then(|| {
                let mut d = vec![T::zero(); m * k];
                gemm(m, o, k, gy, false, wv.data(), false, T::zero(), &mut d);
                Tensor::new(&sx, d).expect("shape")
            });
            let gw = needs[1].then(|| {
                let mut d = vec![T::zero(); o * k];
                gemm(o, m, k, gy, true, x.data(), false, T::zero(), &mut d);
                Tensor::new(&sw, d).expect("shape")
            });
            let mut grads = vec![gx, gw];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| {
                    let mut d = vec![T::zero(); o];
                    for row in gy.chunks(o) {
                        for (acc, &v) in d.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    Tensor::new(&[o], d).expect("shape")
                }));
            }
            grads
        }))
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Uniform B-spline grid: `intervals` cells over `[lo, hi]`, extended by
/// `degree` knots on both sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
    pub degree: usize,
}

impl Default for SplineGrid {
    fn default() -> Self {
        SplineGrid { lo: -1.0, hi: 1.0, intervals: 5, degree: 3 }
    }
}

impl SplineGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Config(format!("degenerate spline range [{}, {}]", self.lo, self.hi)));
        }
        if self.intervals == 0 {
            return Err(Error::Config("spline grid needs at least one interval".into()));
        }
        Ok(())
    }

    /// Number of basis functions, `G + k`.
    pub fn num_basis(&self) -> usize {
        self.intervals + self.degree
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.intervals as f64
    }

    /// The `G + 2k + 1` knots.
    pub fn knots(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.intervals + 2 * self.degree + 1).map(|i| self.lo + (i as f64 - self.degree as f64) * h).collect()
    }

    /// Basis values at `x` into `out[..G+k]`, and their derivatives into
    /// `deriv` when given.
    pub fn eval<T: Scalar>(&self, x: T, out: &mut [T], deriv: Option<&mut [T]>) {
        let (k, g) = (self.degree, self.intervals);
        let cells = g + 2 * k;
        let h = self.step();
        let xf = x.f64();
        let start = self.lo - k as f64 * h;
        out.iter_mut().for_each(|v| *v = T::zero());
        if let Some(d) = deriv.as_deref() {
            debug_assert_eq!(d.len(), out.len());
        }
        // containing cell, with the right end of [lo, hi] folded into the last inner cell
        let cell = if xf == self.hi {
            Some(g + k - 1)
        } else {
            let c = ((xf - start) / h).floor();
            // guard against rounding at cell boundaries
            (c >= 0.0 && (c as usize) < cells && xf.is_finite()).then(|| {
                let mut c = c as usize;
                let t = |i: usize| start + i as f64 * h;
                if xf < t(c) && c > 0 {
                    c -= 1;
                } else if c + 1 < cells && xf >= t(c + 1) {
                    c += 1;
                }
                c
            })
        };
        let Some(cell) = cell else {
            if let Some(d) = deriv {
                d.iter_mut().for_each(|v| *v = T::zero());
            }
            return;
        };
        let mut b = vec![T::zero(); cells];
        b[cell] = T::one();
        let mut prev = b.clone();
        let xt = x;
        for d in 1..=k {
            prev.copy_from_slice(&b);
            let inv = T::of(1.0 / (d as f64 * h));
            for i in 0..cells - d {
                let ti = T::of(start + i as f64 * h);
                let tend = T::of(start + (i + d + 1) as f64 * h);
                b[i] = (xt - ti) * inv * prev[i] + (tend - xt) * inv * prev[i + 1];
            }
            b[cells - d] = T::zero();
        }
        out.copy_from_slice(&b[..g + k]);
        if let Some(dv) = deriv {
            if k == 0 {
                dv.iter_mut().for_each(|v| *v = T::zero());
            } else {
                let inv_h = T::of(1.0 / h);
                for i in 0..g + k {
                    dv[i] = (prev[i] - prev[i + 1]) * inv_h;
                }
            }
        }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Appends an axis of size `G + k` holding the B-spline basis of every
    /// element.
    pub fn bspline_basis(self, grid: SplineGrid) -> Result<Var<'g, T>> {
        grid.validate()?;
        let xv = self.value();
        if xv.is_empty() {
            return dim_err("bspline_basis of an empty tensor");
        }
        let nb = grid.num_basis();
        let mut vals = vec![T::zero(); xv.len() * nb];
        let mut ders = vec![T::zero(); xv.len() * nb];
        for (i, &x) in xv.data().iter().enumerate() {
            grid.eval(x, &mut vals[i * nb..(i + 1) * nb], Some(&mut ders[i * nb..(i + 1) * nb]));
        }
        let mut shape = xv.shape().to_vec();
        shape.push(nb);
        let out = Tensor::new(&shape, vals)?;
        let in_shape = xv.shape().to_vec();
        Ok(self.graph().record(out, &[self], move |go, _| {
            let dx: Vec<T> = go
                .data()
                .chunks_exact(nb)
                .zip(ders.chunks_exact(nb))
                .map(|(g, d)| g.iter().zip(d).fold(T::zero(), |a, (&g, &d)| a + g * d))
                .collect();
            vec![Some(Tensor::new(&in_shape, dx).expect("shape"))]
        }))
    }
}

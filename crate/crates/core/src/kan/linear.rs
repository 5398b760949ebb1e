use super::SplineGrid;
use crate::error::{dim_err, Result};
use crate::nn::{Activation, Builder, Init};
use crate::tensor::{Ctx, ParamId, Scalar, Var};

/// `out_q = sum_p W_b[q,p] * base(x_p) + sum_{p,j} C[q,p,j] * B_j(x_p)`.
#[derive(Clone, Debug)]
pub struct KanLinear {
    pub base_weight: ParamId,
    pub spline_coeffs: ParamId,
    pub grid: SplineGrid,
    pub base: Activation,
    pub n_in: usize,
    pub n_out: usize,
}

impl KanLinear {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        n_in: usize,
        n_out: usize,
        grid: SplineGrid,
        base: Activation,
    ) -> Result<Self> {
        grid.validate()?;
        if n_in == 0 || n_out == 0 {
            return Err(crate::Error::Config(format!("KanLinear {n_in} -> {n_out}")));
        }
        let base_weight = b.param("base_weight", &[n_out, n_in], Init::KaimingUniform { fan_in: n_in, gain: 1.0 })?;
        let spline_coeffs =
            b.param("spline_coeffs", &[n_out, n_in, grid.num_basis()], Init::Normal(0.1 / (n_in as f64).sqrt()))?;
        Ok(KanLinear { base_weight, spline_coeffs, grid, base, n_in, n_out })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = x.shape();
        if s.last() != Some(&self.n_in) {
            return dim_err(format!("KanLinear expects last dim {}, got {s:?}", self.n_in));
        }
        let wb = cx.p(self.base_weight);
        let wc = cx.p(self.spline_coeffs);
        let base = self.base.forward(x).linear(wb, None)?;
        let nb = self.grid.num_basis();
        let mut flat = s.clone();
        *flat.last_mut().expect("rank >= 1") = self.n_in * nb;
        let basis = x.bspline_basis(self.grid)?.reshape(&flat)?;
        let spline = basis.linear(wc.reshape(&[self.n_out, self.n_in * nb])?, None)?;
        base.add(spline)
    }
}

//! Central-difference gradient verification at 64-bit precision.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{Ctx, Mode, ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Minimum distance kept from ReLU/max kinks when drawing check points.
pub const KINK_MARGIN: f64 = 1e-3;

#[inline]
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Max over all input coordinates of `|analytic - central| / max(1, |analytic|)`
/// for a scalar function of `inputs`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.wrt_or_zeros(*v)).collect();

    let eval = |ins: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::no_grad();
        let vars: Vec<_> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars)?;
        Ok(out.value().item())
    };
    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, a) in analytic.iter().enumerate() {
        for i in 0..a.len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            worst = worst.max(rel_err(a.data()[i], (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

/// Which parameter coordinates [`grad_check_params`] perturbs.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// Up to `per_param` coordinates of every parameter, chosen by `seed`.
    Sample {
        per_param: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
    /// Coordinates skipped because the two one-sided slopes disagreed by more
    /// than `KINK_JUMP * eps`, i.e. the stencil straddled a ReLU or max kink.
    pub kinks: usize,
}

/// One-sided slopes of a smooth function differ by about `eps * |f''|`; a
/// difference above `KINK_JUMP * eps` (relative, as in the error) is treated
/// as a kink by [`grad_check_params`].
pub const KINK_JUMP: f64 = 1e3;

/// Gradient check over the parameters of a [`ParamStore`].
///
/// `f` builds the scalar loss from a forward context; it is re-run for every
/// perturbed coordinate.
pub fn grad_check_params<F>(
    store: &mut ParamStore<f64>,
    mode: Mode,
    f: F,
    eps: f64,
    coords: Coords,
) -> Result<ParamCheck>
where
    F: for<'g, 's> Fn(&mut Ctx<'g, 's, f64>) -> Result<Var<'g, f64>>,
{
    store.zero_grad();
    {
        let g = Graph::new();
        let mut cx = Ctx::new(&g, store, mode);
        let loss = f(&mut cx)?;
        let grads = g.backward(loss)?;
        store.accumulate(&grads);
    }
    let ids: Vec<ParamId> = store.param_ids().collect();
    let mut report = ParamCheck { max_rel_err: 0.0, worst_param: String::new(), checked: 0, kinks: 0 };
    for (n, &pid) in ids.iter().enumerate() {
        let len = store.value(pid).len();
        let idx: Vec<usize> = match coords {
            Coords::All => (0..len).collect(),
            Coords::Sample { per_param, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut v = sample(&mut rng, len, per_param.min(len)).into_vec();
                v.sort_unstable();
                v
            }
        };
        for i in idx {
            let analytic = store.grad(pid).data()[i];
            let orig = store.value(pid).data()[i];
            let mut eval = |v: f64| -> Result<f64> {
                store.value_mut(pid).data_mut()[i] = v;
                let g = Graph::no_grad();
                let mut cx = Ctx::new(&g, store, mode);
                let out = f(&mut cx)?;
                let val = out.value().item();
                Ok(val)
            };
            let up = eval(orig + eps)?;
            let down = eval(orig - eps)?;
            let mid = eval(orig)?;
            store.value_mut(pid).data_mut()[i] = orig;
            let jump = ((up - mid) - (mid - down)).abs() / eps / analytic.abs().max(1.0);
            if jump > KINK_JUMP * eps {
                report.kinks += 1;
                continue;
            }
            let e = rel_err(analytic, (up - down) / (2.0 * eps));
            if !e.is_finite() {
                return Err(Error::Domain(format!("non-finite gradient check on `{}`", store.name(pid))));
            }
            if e > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst_param = store.name(pid).to_string();
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Move every value closer than [`KINK_MARGIN`] to zero out to `±KINK_MARGIN`,
/// so ReLU kinks sit outside the finite-difference stencil.
pub fn away_from_zero(t: &Tensor<f64>) -> Tensor<f64> {
    t.map(|v| {
        if v.abs() >= KINK_MARGIN {
            v
        } else if v >= 0.0 {
            KINK_MARGIN
        } else {
            -KINK_MARGIN
        }
    })
}

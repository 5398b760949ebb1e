//! Bag of activations: `sum_p alpha_p * psi_p(x)` with learnable `alpha`.

use serde::{Deserialize, Serialize};

use super::{Activation, Builder, Init};
use crate::error::{dim_err, Result};
use crate::tensor::{Ctx, ParamId, Scalar, Tensor, Var};

/// Members in the order their weights are stored.
pub const BOA_MEMBERS: [Activation; 5] =
    [Activation::Relu, Activation::Tanh, Activation::Softplus, Activation::Gelu, Activation::Silu];

/// Initial value of every mixing weight.
pub const BOA_INIT: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct Boa {
    pub alphas: ParamId,
    pub members: Vec<Activation>,
}

impl Boa {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>) -> Result<Self> {
        Self::with_members(b, &BOA_MEMBERS)
    }

    pub fn with_members<T: Scalar>(b: &mut Builder<'_, T>, members: &[Activation]) -> Result<Self> {
        if members.is_empty() {
            return Err(crate::Error::Config("bag of activations needs at least one member".into()));
        }
        let alphas = b.param("alphas", &[members.len()], Init::Const(BOA_INIT))?;
        Ok(Boa { alphas, members: members.to_vec() })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let a = cx.p(self.alphas);
        boa(x, a, &self.members)
    }
}

/// Fused weighted sum of activations. Terms are accumulated in member
/// order starting from zero, so a one-hot `alphas` reproduces the chosen
/// member bit for bit.
pub fn boa<'g, T: Scalar>(x: Var<'g, T>, alphas: Var<'g, T>, members: &[Activation]) -> Result<Var<'g, T>> {
    let av = alphas.value();
    if av.shape() != [members.len()] {
        return dim_err(format!("{} activation weights for {} members", av.len(), members.len()));
    }
    let xv = x.value();
    let a: Vec<T> = av.data().to_vec();
    let mut out = vec![T::zero(); xv.len()];
    for (m, &w) in members.iter().zip(&a) {
        for (o, &v) in out.iter_mut().zip(xv.data()) {
            *o += w * m.eval(v);
        }
    }
    let out = Tensor::new(xv.shape(), out)?;
    let members = members.to_vec();
    Ok(x.graph().record(out, &[x, alphas], move |go, needs| {
        let (g, xd) = (go.data(), xv.data());
        let dx = needs[0].then(|| {
            let d: Vec<T> = g
                .iter()
                .zip(xd)
                .map(|(&g, &v)| {
                    let mut s = T::zero();
                    for (m, &w) in members.iter().zip(&a) {
                        s += w * m.unary().deriv(v);
                    }
                    g * s
                })
                .collect();
            Tensor::new(xv.shape(), d).expect("shape")
        });
        let da = needs[1].then(|| {
            let d: Vec<T> =
                members.iter().map(|m| g.iter().zip(xd).fold(T::zero(), |acc, (&g, &v)| acc + g * m.eval(v))).collect();
            Tensor::new(&[members.len()], d).expect("shape")
        });
        vec![dx, da]
    }))
}

/// Configuration of an activation position: a learnable bag or one fixed
/// function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Boa,
    Fixed(Activation),
}

/// Either a bag of activations or one fixed function.
#[derive(Clone, Debug)]
pub enum ActivationSlot {
    Boa(Boa),
    Fixed(Activation),
}

impl ActivationSlot {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, kind: SlotKind, members: &[Activation]) -> Result<Self> {
        Ok(match kind {
            SlotKind::Boa => ActivationSlot::Boa(Boa::with_members(b, members)?),
            SlotKind::Fixed(a) => ActivationSlot::Fixed(a),
        })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        match self {
            ActivationSlot::Boa(b) => b.forward(cx, x),
            ActivationSlot::Fixed(a) => Ok(a.forward(x)),
        }
    }
}

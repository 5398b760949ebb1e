use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Unary, Var};

/// Fixed activation functions used by the blocks and the bag of activations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
    Gelu,
    Silu,
}

impl Activation {
    pub fn unary(self) -> Unary {
        match self {
            Activation::Identity => Unary::Identity,
            Activation::Relu => Unary::Relu,
            Activation::Tanh => Unary::Tanh,
            Activation::Sigmoid => Unary::Sigmoid,
            Activation::Softplus => Unary::Softplus,
            Activation::Gelu => Unary::Gelu,
            Activation::Silu => Unary::Silu,
        }
    }

    pub fn eval<T: Scalar>(self, x: T) -> T {
        self.unary().eval(x)
    }

    pub fn forward<'g, T: Scalar>(self, x: Var<'g, T>) -> Var<'g, T> {
        if self == Activation::Identity {
            return x;
        }
        x.apply(self.unary())
    }
}

//! Building blocks shared by the encoder, decoder and Mamba blocks.

mod activation;
mod attention;
mod boa;
mod conv_block;

pub use activation::Activation;
pub use attention::SpatialAttention;
pub use boa::{boa, SlotKind};
pub use boa::{ActivationSlot, Boa, BOA_INIT, BOA_MEMBERS};
pub use conv_block::{BlockKind, ConvBlock, ConvBn, DepthwiseBn};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{BufferId, Ctx, ParamId, ParamStore, Scalar, Tensor, Var};

/// How a freshly registered parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in)) * gain`.
    KaimingUniform {
        fan_in: usize,
        gain: f64,
    },
    Uniform(f64, f64),
    Normal(f64),
}

impl Init {
    fn sample(self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(v) => vec![v; n],
            Init::KaimingUniform { fan_in, gain } => {
                let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            }
            Init::Uniform(lo, hi) => (0..n).map(|_| rng.random_range(lo..=hi)).collect(),
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| d.sample(rng)).collect()
            }
        }
    }
}

/// Registers named parameters into a [`ParamStore`] with seeded initial
/// values. Values are drawn in `f64` and then cast, so `f32` and `f64`
/// builds from one seed agree up to rounding.
pub struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Builder { store, rng, prefix: String::new() }
    }

    /// Child builder whose names are prefixed with `name.`.
    pub fn scope(&mut self, name: &str) -> Builder<'_, T> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Builder { store: self.store, rng: self.rng, prefix }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let n = shape.iter().product();
        let values = init.sample(n, self.rng);
        let full = self.full_name(name);
        self.store.add_param(&full, Tensor::from_f64(shape, &values)?)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<T>) -> Result<BufferId> {
        let full = self.full_name(name);
        self.store.add_buffer(&full, value)
    }

    /// Overwrite a value registered through this builder.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        self.store.set(id, value)
    }

    /// A generator seeded from this builder's stream, for custom init.
    pub fn fork_rng(&mut self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng.random())
    }
}

/// Batch norm with the stats buffer looked up through the context.
pub(crate) fn batch_norm<'g, T: Scalar>(
    cx: &mut Ctx<'g, '_, T>,
    x: Var<'g, T>,
    gamma: ParamId,
    beta: ParamId,
    stats: BufferId,
) -> Result<Var<'g, T>> {
    let (g, b) = (cx.p(gamma), cx.p(beta));
    let train = cx.training();
    x.batch_norm2d(g, b, cx.store.buffer_mut(stats), train)
}

/// Layer norm parameters `(gamma, beta)` over a width.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, width: usize) -> Result<Self> {
        Ok(LayerNorm { gamma: b.param("gamma", &[width], Init::Ones)?, beta: b.param("beta", &[width], Init::Zeros)? })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let (g, b) = (cx.p(self.gamma), cx.p(self.beta));
        x.layer_norm(g, b)
    }
}

/// `[N, C, H, W] -> [N, H*W, C]`, tokens in row-major `(h, w)` order.
pub fn image_to_tokens<'g, T: Scalar>(x: Var<'g, T>) -> Result<Var<'g, T>> {
    let s = x.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    x.reshape(&[n, c, hw])?.transpose_last2()
}

/// `[N, h*w, E] -> [N, E, h, w]`.
pub fn tokens_to_image<'g, T: Scalar>(t: Var<'g, T>, h: usize, w: usize) -> Result<Var<'g, T>> {
    let s = t.shape();
    if s.len() != 3 || s[1] != h * w {
        return crate::error::dim_err(format!("{s:?} tokens do not tile a {h}x{w} grid"));
    }
    t.transpose_last2()?.reshape(&[s[0], s[2], h, w])
}

/// `x + LN(fc2(GELU(fc1(x))))` over tokens, a drop-in stand-in for the KAN
/// block with plain linear layers.
#[derive(Clone, Debug)]
pub struct TokenMlp {
    pub fc1: (ParamId, ParamId),
    pub fc2: (ParamId, ParamId),
    pub norm: LayerNorm,
}

impl TokenMlp {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, dim: usize, hidden: usize) -> Result<Self> {
        let mut lin = |name: &str, o: usize, i: usize| -> Result<(ParamId, ParamId)> {
            let mut s = b.scope(name);
            Ok((
                s.param("weight", &[o, i], Init::KaimingUniform { fan_in: i, gain: 1.0 })?,
                s.param("bias", &[o], Init::Zeros)?,
            ))
        };
        let fc1 = lin("fc1", hidden, dim)?;
        let fc2 = lin("fc2", dim, hidden)?;
        Ok(TokenMlp { fc1, fc2, norm: LayerNorm::new(&mut b.scope("ln"), dim)? })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let (w1, b1, w2, b2) = (cx.p(self.fc1.0), cx.p(self.fc1.1), cx.p(self.fc2.0), cx.p(self.fc2.1));
        let h = Activation::Gelu.forward(x.linear(w1, Some(b1))?).linear(w2, Some(b2))?;
        x.add(self.norm.forward(cx, h)?)
    }
}

/// Token-wise linear map `[N, L, I] -> [N, L, O]` stored as `[O, I]`, no bias.
pub fn project_image<'g, T: Scalar>(cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>, w: ParamId) -> Result<Var<'g, T>> {
    let s = x.shape();
    if s.len() != 4 {
        return crate::error::dim_err(format!("project_image on {s:?}"));
    }
    let wv = cx.p(w);
    let t = image_to_tokens(x)?.linear(wv, None)?;
    tokens_to_image(t, s[2], s[3])
}

use super::{KanLinear, SplineGrid};
use crate::error::Result;
use crate::nn::{image_to_tokens, tokens_to_image, Activation, Builder, DepthwiseBn, Init, LayerNorm};
use crate::tensor::{Ctx, ParamId, Scalar, Var};

pub const KAN_STAGES: usize = 3;

/// One stage of the KAN layer: KanLinear over the embedding, then a
/// depthwise conv on the token grid.
#[derive(Clone, Debug)]
pub struct KanStage {
    pub linear: KanLinear,
    pub dw: DepthwiseBn,
}

/// Three `KanLinear -> DwConv` stages on a `[N, h*w, E]` token sequence.
#[derive(Clone, Debug)]
pub struct KanLayer {
    pub stages: Vec<KanStage>,
}

impl KanLayer {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, dim: usize, grid: SplineGrid, base: Activation) -> Result<Self> {
        let stages = (0..KAN_STAGES)
            .map(|i| {
                let mut s = b.scope(&format!("stage{i}"));
                Ok(KanStage {
                    linear: KanLinear::new(&mut s.scope("fc"), dim, dim, grid, base)?,
                    dw: DepthwiseBn::new(&mut s.scope("dw"), dim)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(KanLayer { stages })
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        cx: &mut Ctx<'g, '_, T>,
        x: Var<'g, T>,
        h: usize,
        w: usize,
    ) -> Result<Var<'g, T>> {
        let mut t = x;
        for s in &self.stages {
            t = s.linear.forward(cx, t)?;
            let img = tokens_to_image(t, h, w)?;
            t = image_to_tokens(s.dw.forward(cx, img)?)?;
        }
        Ok(t)
    }
}

/// `x + LN(KanLayer(x))`.
#[derive(Clone, Debug)]
pub struct KanBlock {
    pub layer: KanLayer,
    pub norm: LayerNorm,
}

impl KanBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, dim: usize, grid: SplineGrid, base: Activation) -> Result<Self> {
        Ok(KanBlock {
            layer: KanLayer::new(&mut b.scope("layer"), dim, grid, base)?,
            norm: LayerNorm::new(&mut b.scope("ln"), dim)?,
        })
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        cx: &mut Ctx<'g, '_, T>,
        x: Var<'g, T>,
        h: usize,
        w: usize,
    ) -> Result<Var<'g, T>> {
        let y = self.layer.forward(cx, x, h, w)?;
        x.add(self.norm.forward(cx, y)?)
    }
}

/// Strided 3x3 convolution to `E` channels, flattened to layer-normed tokens.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub kernel: ParamId,
    pub norm: LayerNorm,
    pub dim: usize,
}

/// Tokens plus the grid they tile.
#[derive(Clone, Copy, Debug)]
pub struct Tokens<'g, T> {
    pub tokens: Var<'g, T>,
    pub h: usize,
    pub w: usize,
}

impl PatchEmbed {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cin: usize, dim: usize) -> Result<Self> {
        Ok(PatchEmbed {
            kernel: b.param("kernel", &[dim, cin, 3, 3], Init::KaimingUniform { fan_in: cin * 9, gain: 1.0 })?,
            norm: LayerNorm::new(&mut b.scope("ln"), dim)?,
            dim,
        })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Tokens<'g, T>> {
        let k = cx.p(self.kernel);
        let y = x.conv2d(k, None, 2, 1)?;
        let s = y.shape();
        let tokens = self.norm.forward(cx, image_to_tokens(y)?)?;
        Ok(Tokens { tokens, h: s[2], w: s[3] })
    }
}

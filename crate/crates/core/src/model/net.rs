use super::{ModelConfig, NormPlacement, Variant};
use crate::error::{dim_err, Result};
use crate::kan::{KanBlock, PatchEmbed};
use crate::nn::{image_to_tokens, tokens_to_image, BlockKind, Builder, ConvBlock, Init, LayerNorm};
use crate::ssm::{MambaKanBlock, TokenizedMamba};
use crate::tensor::{Ctx, ParamId, Scalar, Var};

/// The Mamba block after the first conv block.
#[derive(Clone, Debug)]
pub enum MambaStage {
    Full(MambaKanBlock),
    Tokenized(TokenizedMamba),
}

impl MambaStage {
    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        match self {
            MambaStage::Full(b) => b.forward(cx, x),
            MambaStage::Tokenized(b) => b.forward(cx, x),
        }
    }
}

/// Patch embedding, KAN block and the extra layer norm of a tokenized
/// encoder stage.
#[derive(Clone, Debug)]
pub struct TokenStage {
    pub embed: PatchEmbed,
    pub kan: KanBlock,
    pub norm: LayerNorm,
    pub placement: NormPlacement,
}

impl TokenStage {
    fn new<T: Scalar>(b: &mut Builder<'_, T>, cin: usize, dim: usize, cfg: &ModelConfig) -> Result<Self> {
        Ok(TokenStage {
            embed: PatchEmbed::new(&mut b.scope("embed"), cin, dim)?,
            kan: KanBlock::new(&mut b.scope("kan"), dim, cfg.spline, cfg.kan_base)?,
            norm: LayerNorm::new(&mut b.scope("norm"), dim)?,
            placement: cfg.norm_placement,
        })
    }

    fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let tk = self.embed.forward(cx, x)?;
        let t = match self.placement {
            NormPlacement::AfterKan => {
                let t = self.kan.forward(cx, tk.tokens, tk.h, tk.w)?;
                self.norm.forward(cx, t)?
            }
            NormPlacement::BeforeKan => {
                let t = self.norm.forward(cx, tk.tokens)?;
                self.kan.forward(cx, t, tk.h, tk.w)?
            }
        };
        tokens_to_image(t, tk.h, tk.w)
    }
}

/// Encoder-decoder segmentation network emitting one logit per pixel.
#[derive(Clone, Debug)]
pub struct Net {
    pub c1: ConvBlock,
    pub m1: MambaStage,
    pub c2: ConvBlock,
    pub c3: ConvBlock,
    pub p1: TokenStage,
    pub p2: TokenStage,
    pub d1: ConvBlock,
    pub k3: KanBlock,
    pub d2: ConvBlock,
    pub k4: KanBlock,
    pub d3: ConvBlock,
    pub d4: ConvBlock,
    pub d5: ConvBlock,
    pub o1: (ParamId, ParamId),
    pub in_channels: usize,
}

/// Intermediate feature maps of one forward pass, in execution order.
#[derive(Clone, Debug)]
pub struct Features<'g, T> {
    pub stages: Vec<(&'static str, Var<'g, T>)>,
    pub logits: Var<'g, T>,
}

impl Net {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let [c1, c2, c3] = cfg.conv_channels;
        let [e1, e2] = cfg.embed_dims;
        let ms = cfg.mamba_settings();
        let conv = |b: &mut Builder<'_, T>, name: &str, kind, i, o| ConvBlock::new(&mut b.scope(name), kind, i, o);
        let kan =
            |b: &mut Builder<'_, T>, name: &str, d| KanBlock::new(&mut b.scope(name), d, cfg.spline, cfg.kan_base);
        Ok(Net {
            c1: conv(b, "c1", BlockKind::Down, cfg.in_channels, c1)?,
            m1: match cfg.variant {
                Variant::Full => MambaStage::Full(MambaKanBlock::new(&mut b.scope("m1"), c1, c1, &ms)?),
                v => {
                    MambaStage::Tokenized(TokenizedMamba::new(&mut b.scope("m1"), c1, c1, &ms, v != Variant::MambaMlp)?)
                }
            },
            c2: conv(b, "c2", BlockKind::Down, c1, c2)?,
            c3: conv(b, "c3", BlockKind::Down, c2, c3)?,
            p1: TokenStage::new(&mut b.scope("p1"), c3, e1, cfg)?,
            p2: TokenStage::new(&mut b.scope("p2"), e1, e2, cfg)?,
            d1: conv(b, "d1", BlockKind::Up, e2, e1)?,
            k3: kan(b, "k3", e1)?,
            d2: conv(b, "d2", BlockKind::Up, e1, c3)?,
            k4: kan(b, "k4", c3)?,
            d3: conv(b, "d3", BlockKind::Up, c3, c2)?,
            d4: conv(b, "d4", BlockKind::Up, c2, c1)?,
            d5: conv(b, "d5", BlockKind::Up, c1, c1)?,
            o1: {
                let mut s = b.scope("o1");
                (
                    s.param("kernel", &[1, c1, 1, 1], Init::KaimingUniform { fan_in: c1, gain: 1.0 })?,
                    s.param("bias", &[1], Init::Zeros)?,
                )
            },
            in_channels: cfg.in_channels,
        })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(self.features(cx, x)?.logits)
    }

    pub fn features<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Features<'g, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_channels {
            return dim_err(format!("model expects [N, {}, H, W], got {s:?}", self.in_channels));
        }
        let d = ModelConfig::DIVISOR;
        if !s[2].is_multiple_of(d) || !s[3].is_multiple_of(d) || s[2] == 0 || s[3] == 0 {
            return dim_err(format!("input extents {}x{} must be positive multiples of {d}", s[2], s[3]));
        }
        let mut st = Vec::with_capacity(16);
        let a1 = self.c1.forward(cx, x)?;
        st.push(("c1", a1));
        // the Mamba stage halves the grid; bring it back to the C1 resolution
        let m1 = self.m1.forward(cx, a1)?.upsample_bilinear2x()?;
        st.push(("m1", m1));
        let a2 = self.c2.forward(cx, m1)?;
        st.push(("c2", a2));
        let a3 = self.c3.forward(cx, a2)?;
        st.push(("c3", a3));
        let t1 = self.p1.forward(cx, a3)?;
        st.push(("p1", t1));
        let bott = self.p2.forward(cx, t1)?;
        st.push(("p2", bott));

        let y = self.d1.forward(cx, bott)?.add(t1)?;
        let y = kan_on_image(cx, &self.k3, y)?;
        st.push(("d1", y));
        let y = self.d2.forward(cx, y)?.add(a3)?;
        let y = kan_on_image(cx, &self.k4, y)?;
        st.push(("d2", y));
        let y = self.d3.forward(cx, y)?.add(a2)?;
        st.push(("d3", y));
        let y = self.d4.forward(cx, y)?.add(m1)?;
        st.push(("d4", y));
        let y = self.d5.forward(cx, y)?;
        st.push(("d5", y));
        let (k, b) = (cx.p(self.o1.0), cx.p(self.o1.1));
        let logits = y.conv2d(k, Some(b), 1, 0)?;
        Ok(Features { stages: st, logits })
    }
}

fn kan_on_image<'g, T: Scalar>(cx: &mut Ctx<'g, '_, T>, k: &KanBlock, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let s = x.shape();
    let t = k.forward(cx, image_to_tokens(x)?, s[2], s[3])?;
    tokens_to_image(t, s[2], s[3])
}

use super::{BranchMask, Branches, MambaSettings, Resample, Ssm};
use crate::error::{dim_err, Result};
use crate::kan::{KanBlock, PatchEmbed};
use crate::nn::{
    image_to_tokens, project_image, tokens_to_image, ActivationSlot, Builder, ConvBn, Init, SpatialAttention, TokenMlp,
};
use crate::tensor::{Ctx, ParamId, Scalar, Var};

/// Convolutional Mamba block: a 1x1 input projection, three
/// `conv3x3 -> BN` mini-blocks separated by spatial attention, one
/// activation, the selective scan, attention, and an output projection,
/// summed with the (projected) input and its activation. Keeps spatial
/// extents.
#[derive(Clone, Debug)]
pub struct ClassicalMamba {
    pub in_proj: ParamId,
    pub minis: [ConvBn; 3],
    pub attns: [SpatialAttention; 2],
    pub act_main: ActivationSlot,
    pub ssm: Ssm,
    pub attn_final: SpatialAttention,
    pub out_proj: ParamId,
    pub skip: Resample,
    pub act_gate: ActivationSlot,
    pub mask: BranchMask,
    pub cin: usize,
    pub dim: usize,
}

impl ClassicalMamba {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cin: usize, dim: usize, cfg: &MambaSettings) -> Result<Self> {
        let mini = |b: &mut Builder<'_, T>, i: usize| ConvBn::new(&mut b.scope(&format!("mini{i}")), dim, dim);
        let att = |b: &mut Builder<'_, T>, name: &str| SpatialAttention::new(&mut b.scope(name));
        Ok(ClassicalMamba {
            in_proj: b.param("in_proj", &[dim, cin], Init::KaimingUniform { fan_in: cin, gain: 1.0 })?,
            minis: [mini(b, 0)?, mini(b, 1)?, mini(b, 2)?],
            attns: [att(b, "attn0")?, att(b, "attn1")?],
            act_main: ActivationSlot::new(&mut b.scope("act_main"), cfg.main, &cfg.boa_members)?,
            ssm: Ssm::new(&mut b.scope("ssm"), dim, cfg.state)?,
            attn_final: att(b, "attn_final")?,
            out_proj: b.param("out_proj", &[dim, dim], Init::KaimingUniform { fan_in: dim, gain: 1.0 })?,
            skip: Resample::new(b, cin, dim, false)?,
            act_gate: ActivationSlot::new(&mut b.scope("act_gate"), cfg.gate, &cfg.boa_members)?,
            mask: BranchMask::default(),
            cin,
            dim,
        })
    }

    pub fn branches<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Branches<'g, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.cin {
            return dim_err(format!("Mamba block expects [N, {}, H, W], got {s:?}", self.cin));
        }
        let (h, w) = (s[2], s[3]);
        let mut y = project_image(cx, x, self.in_proj)?;
        for (i, m) in self.minis.iter().enumerate() {
            y = m.forward(cx, y)?;
            if let Some(a) = self.attns.get(i) {
                y = a.forward(cx, y)?;
            }
        }
        let y = self.act_main.forward(cx, y)?;
        let t = self.ssm.forward(cx, image_to_tokens(y)?)?;
        let img = self.attn_final.forward(cx, tokens_to_image(t, h, w)?)?;
        let main = project_image(cx, img, self.out_proj)?;
        let skip = self.skip.forward(cx, x)?;
        let gate = self.act_gate.forward(cx, skip)?;
        Ok(Branches { main, skip, gate })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        self.branches(cx, x)?.combine(self.mask)
    }
}

/// Token mixer placed between the patch embedding and a classical block.
#[derive(Clone, Debug)]
pub enum TokenMixer {
    Kan(KanBlock),
    Mlp(TokenMlp),
}

/// Patch embedding and a token mixer feeding a [`ClassicalMamba`]; the
/// ablation counterpart of the Mamba-KAN block with the same shape
/// contract.
#[derive(Clone, Debug)]
pub struct TokenizedMamba {
    pub embed: PatchEmbed,
    pub mixer: TokenMixer,
    pub core: ClassicalMamba,
}

impl TokenizedMamba {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        cin: usize,
        dim: usize,
        cfg: &MambaSettings,
        kan: bool,
    ) -> Result<Self> {
        let embed = PatchEmbed::new(&mut b.scope("embed"), cin, dim)?;
        let mixer = if kan {
            TokenMixer::Kan(KanBlock::new(&mut b.scope("kanb"), dim, cfg.spline, cfg.kan_base)?)
        } else {
            TokenMixer::Mlp(TokenMlp::new(&mut b.scope("mlp"), dim, dim)?)
        };
        let core = ClassicalMamba::new(&mut b.scope("mamba"), dim, dim, cfg)?;
        Ok(TokenizedMamba { embed, mixer, core })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &mut Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let tk = self.embed.forward(cx, x)?;
        let t = match &self.mixer {
            TokenMixer::Kan(k) => k.forward(cx, tk.tokens, tk.h, tk.w)?,
            TokenMixer::Mlp(m) => m.forward(cx, tk.tokens)?,
        };
        self.core.forward(cx, tokens_to_image(t, tk.h, tk.w)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, SlotKind};
    use crate::tensor::gradcheck::{away_from_zero, grad_check_params, Coords};
    use crate::tensor::{Graph, Mode, ParamStore, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn silu_cfg() -> MambaSettings {
        MambaSettings {
            state: 2,
            main: SlotKind::Fixed(Activation::Silu),
            gate: SlotKind::Fixed(Activation::Silu),
            ..Default::default()
        }
    }

    fn build(cin: usize, dim: usize) -> (ParamStore<f64>, ClassicalMamba) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let blk =
            ClassicalMamba::new(&mut Builder::new(&mut store, &mut rng).scope("cm"), cin, dim, &silu_cfg()).unwrap();
        (store, blk)
    }

    fn input(shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_f64(shape, &(0..n).map(|i| ((i * 3 + 5) as f64 * 0.43).cos()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn preserves_extents() {
        let (mut store, blk) = build(3, 4);
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Train);
        assert_eq!(blk.forward(&mut cx, g.input(input(&[2, 3, 5, 6]))).unwrap().shape(), vec![2, 4, 5, 6]);
    }

    #[test]
    fn zero_forced_main_gives_skip_plus_activation() {
        let (mut store, blk) = build(3, 3);
        store.set(blk.out_proj, Tensor::zeros(&[3, 3])).unwrap();
        let x = input(&[1, 3, 4, 4]);
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Eval);
        let y = blk.forward(&mut cx, g.input(x.clone())).unwrap();
        for (a, &v) in y.value().data().iter().zip(x.data()) {
            assert!((a - (v + Activation::Silu.eval(v))).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_compositional_replay() {
        let (mut store, blk) = build(2, 3);
        let mut replay = store.clone();
        let x = input(&[1, 2, 4, 4]);
        let g = Graph::new();
        let mut cx = Ctx::new(&g, &mut store, Mode::Train);
        let y = blk.forward(&mut cx, g.input(x.clone())).unwrap().value();

        let g2 = Graph::new();
        let mut cx = Ctx::new(&g2, &mut replay, Mode::Train);
        let xi = g2.input(x);
        let w = cx.p(blk.in_proj).reshape(&[3, 2, 1, 1]).unwrap();
        let mut h = xi.conv2d(w, None, 1, 0).unwrap();
        h = blk.minis[0].forward(&mut cx, h).unwrap();
        h = blk.attns[0].forward(&mut cx, h).unwrap();
        h = blk.minis[1].forward(&mut cx, h).unwrap();
        h = blk.attns[1].forward(&mut cx, h).unwrap();
        h = blk.minis[2].forward(&mut cx, h).unwrap().apply(Activation::Silu.unary());
        let t = blk.ssm.forward(&mut cx, h.reshape(&[1, 3, 16]).unwrap().transpose_last2().unwrap()).unwrap();
        let img =
            blk.attn_final.forward(&mut cx, t.transpose_last2().unwrap().reshape(&[1, 3, 4, 4]).unwrap()).unwrap();
        let wo = cx.p(blk.out_proj).reshape(&[3, 3, 1, 1]).unwrap();
        let main = img.conv2d(wo, None, 1, 0).unwrap();
        let ws = cx.p(blk.skip.proj.unwrap()).reshape(&[3, 2, 1, 1]).unwrap();
        let skip = xi.conv2d(ws, None, 1, 0).unwrap();
        let want = main.add(skip).unwrap().add(skip.apply(Activation::Silu.unary())).unwrap().value();
        assert!(y.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn gradient_check_end_to_end() {
        let (mut store, blk) = build(2, 2);
        let x = away_from_zero(&input(&[1, 2, 3, 3]));
        let rep = grad_check_params(
            &mut store,
            Mode::Eval,
            |cx| {
                let xi = cx.graph.constant(x.clone());
                Ok(blk.forward(cx, xi)?.tanh().sum())
            },
            1e-6,
            Coords::All,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }

    #[test]
    fn tokenized_variants_halve_extents() {
        for kan in [false, true] {
            let mut store = ParamStore::<f64>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let blk = TokenizedMamba::new(&mut Builder::new(&mut store, &mut rng), 3, 4, &silu_cfg(), kan).unwrap();
            let g = Graph::new();
            let mut cx = Ctx::new(&g, &mut store, Mode::Train);
            assert_eq!(blk.forward(&mut cx, g.input(input(&[2, 3, 8, 8]))).unwrap().shape(), vec![2, 4, 4, 4]);
        }
    }
}
